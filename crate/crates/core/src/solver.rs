//! Composite gradient fitting of the transfer model and its two linear
//! baselines.
//!
//! The smooth part of the objective is
//! `L = 1/2 * sum_k (y_k - <w0 + (w_i(k) + w_j(k)) / 2, x_k>)^2`
//! and the penalty is `lambda_a * sum_i |w_i|_1`. Each iteration takes a
//! gradient step on `w0` and a gradient step followed by soft-thresholding
//! on every `w_i`.
//!
//! The loss is quadratic, so the iterations run on per-pair sufficient
//! statistics (`sum x x^T`, `sum y x`, `sum y^2`) and cost nothing in the
//! number of examples. [`objective`] and [`loss_gradient`] work directly on
//! the examples and serve as the reference path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{default_names, LabeledExample, PairScorer, SourcePair, TransferModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub n_sources: usize,
    pub dim: usize,
    pub feature_names: Vec<String>,
    pub source_names: Vec<String>,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, n_sources: usize, dim: usize) -> Result<Self> {
        let data = Dataset {
            examples,
            n_sources,
            dim,
            feature_names: default_names("f", dim),
            source_names: default_names("s", n_sources),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_names(mut self, feature_names: Vec<String>, source_names: Vec<String>) -> Result<Self> {
        self.feature_names = feature_names;
        self.source_names = source_names;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("dataset dimension is zero".into()));
        }
        if self.feature_names.len() != self.dim {
            return Err(Error::Validation(format!(
                "{} feature names for dimension {}",
                self.feature_names.len(),
                self.dim
            )));
        }
        if self.source_names.len() != self.n_sources {
            return Err(Error::Validation(format!(
                "{} source names for {} sources",
                self.source_names.len(),
                self.n_sources
            )));
        }
        for (k, ex) in self.examples.iter().enumerate() {
            if ex.x.len() != self.dim {
                return Err(Error::Shape {
                    expected: self.dim,
                    found: ex.x.len(),
                });
            }
            ex.pair.check(self.n_sources)?;
            if !ex.x.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("example {k} has non-finite features")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Same sources and features, selected examples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            n_sources: self.n_sources,
            dim: self.dim,
            feature_names: self.feature_names.clone(),
            source_names: self.source_names.clone(),
        }
    }

    /// Example counts per source pair, in pair order.
    pub fn pair_counts(&self) -> BTreeMap<SourcePair, usize> {
        let mut counts = BTreeMap::new();
        for ex in &self.examples {
            *counts.entry(ex.pair).or_insert(0) += 1;
        }
        counts
    }

    fn check_model(&self, model: &TransferModel) -> Result<()> {
        if model.dim() != self.dim {
            return Err(Error::Shape {
                expected: model.dim(),
                found: self.dim,
            });
        }
        if model.n_sources() < self.n_sources {
            return Err(Error::SourceIndex {
                index: self.n_sources - 1,
                n_sources: model.n_sources(),
            });
        }
        Ok(())
    }

    fn empty_model(&self) -> TransferModel {
        TransferModel {
            w0: vec![0.0; self.dim],
            w: vec![vec![0.0; self.dim]; self.n_sources],
            feature_names: self.feature_names.clone(),
            sources: self.source_names.clone(),
            lambda_a: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed(f64),
    /// Start from `initial` (or `1 / L` with `L` estimated by power
    /// iteration) and multiply by `shrink` until sufficient decrease holds.
    Backtracking { initial: Option<f64>, shrink: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda_a: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    pub step: StepPolicy,
    /// Initialization is deterministic zeros; reserved.
    pub seed: u64,
    /// Ridge scale for the independent baseline, relative to `trace(X^T X) / d`.
    pub indep_ridge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_a: 0.0,
            max_iters: 10_000,
            tol: 1e-8,
            step: StepPolicy::Backtracking {
                initial: None,
                shrink: 0.5,
            },
            seed: 0,
            indep_ridge: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(mut self, lambda_a: f64) -> Self {
        self.lambda_a = lambda_a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_a >= 0.0 && self.lambda_a.is_finite()) {
            return Err(Error::Argument(format!("lambda_a must be >= 0, got {}", self.lambda_a)));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.indep_ridge >= 0.0) {
            return Err(Error::Argument(format!("indep_ridge must be >= 0, got {}", self.indep_ridge)));
        }
        match self.step {
            StepPolicy::Fixed(g) if !(g > 0.0 && g.is_finite()) => {
                Err(Error::Argument(format!("fixed step must be > 0, got {g}")))
            }
            StepPolicy::Backtracking { initial, shrink } => {
                if let Some(g) = initial {
                    if !(g > 0.0 && g.is_finite()) {
                        return Err(Error::Argument(format!("initial step must be > 0, got {g}")));
                    }
                }
                if !(shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::Argument(format!("shrink must lie in (0, 1), got {shrink}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub step_size: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
}

impl SolverTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    /// `iter,objective,step_size,elapsed_seconds` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,step_size,elapsed_seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.iter, r.objective, r.step_size, r.elapsed_seconds);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Gradient of the smooth loss with respect to `w0` and each `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w0: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

/// Squared loss over the examples, without the penalty.
pub fn loss(model: &TransferModel, data: &Dataset) -> Result<f64> {
    data.check_model(model)?;
    let mut total = 0.0;
    for ex in &data.examples {
        let r = ex.y.sign() - model.score_unchecked(ex.pair, &ex.x);
        total += r * r;
    }
    Ok(0.5 * total)
}

pub fn l1_penalty(model: &TransferModel, lambda_a: f64) -> f64 {
    lambda_a * model.w.iter().flatten().map(|v| v.abs()).sum::<f64>()
}

/// Loss plus `lambda_a * sum_i |w_i|_1`.
pub fn objective(model: &TransferModel, data: &Dataset, lambda_a: f64) -> Result<f64> {
    Ok(loss(model, data)? + l1_penalty(model, lambda_a))
}

pub fn loss_gradient(model: &TransferModel, data: &Dataset) -> Result<Gradient> {
    data.check_model(model)?;
    let d = data.dim;
    let mut g0 = vec![0.0; d];
    let mut gw = vec![vec![0.0; d]; model.n_sources()];
    for ex in &data.examples {
        let r = ex.y.sign() - model.score_unchecked(ex.pair, &ex.x);
        for (k, xk) in ex.x.iter().enumerate() {
            let v = r * xk;
            g0[k] -= v;
            gw[ex.pair.a()][k] -= 0.5 * v;
            gw[ex.pair.b()][k] -= 0.5 * v;
        }
    }
    Ok(Gradient { w0: g0, w: gw })
}

/// `sign(v) * max(|v| - tau, 0)` per coordinate.
pub fn soft_threshold(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::Argument(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(v.iter().map(|&x| shrink(x, tau)).collect())
}

#[inline]
fn shrink(x: f64, tau: f64) -> f64 {
    let m = x.abs() - tau;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Per-pair sufficient statistics of the squared loss.
#[derive(Debug, Clone)]
struct PairStats {
    pair: SourcePair,
    gram: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
}

impl PairStats {
    fn collect(data: &Dataset) -> Vec<PairStats> {
        let d = data.dim;
        let mut by_pair: BTreeMap<SourcePair, PairStats> = BTreeMap::new();
        for ex in &data.examples {
            let s = by_pair.entry(ex.pair).or_insert_with(|| PairStats {
                pair: ex.pair,
                gram: vec![0.0; d * d],
                xty: vec![0.0; d],
                yty: 0.0,
            });
            let y = ex.y.sign();
            for r in 0..d {
                s.xty[r] += y * ex.x[r];
                for c in 0..d {
                    s.gram[r * d + c] += ex.x[r] * ex.x[c];
                }
            }
            s.yty += y * y;
        }
        by_pair.into_values().collect()
    }

    fn gram_times(&self, w: &[f64], out: &mut [f64]) {
        let d = w.len();
        for r in 0..d {
            out[r] = (0..d).map(|c| self.gram[r * d + c] * w[c]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Transfer,
    Pooled,
}

/// The quadratic loss over sufficient statistics, plus scratch space.
struct Problem {
    dim: usize,
    n_sources: usize,
    stats: Vec<PairStats>,
    mode: Mode,
}

impl Problem {
    fn new(data: &Dataset, mode: Mode) -> Self {
        Problem {
            dim: data.dim,
            n_sources: data.n_sources,
            stats: PairStats::collect(data),
            mode,
        }
    }

    fn loss(&self, m: &TransferModel) -> f64 {
        let mut w = vec![0.0; self.dim];
        let mut gw = vec![0.0; self.dim];
        let mut total = 0.0;
        for s in &self.stats {
            m.combined_weight_into(s.pair, &mut w);
            s.gram_times(&w, &mut gw);
            let quad: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
            let lin: f64 = w.iter().zip(&s.xty).map(|(a, b)| a * b).sum();
            total += s.yty - 2.0 * lin + quad;
        }
        // Rounding can push an exact fit a hair below zero; NaN passes through.
        if total < 0.0 {
            0.0
        } else {
            0.5 * total
        }
    }

    fn gradient(&self, m: &TransferModel, g: &mut Gradient) {
        g.w0.iter_mut().for_each(|v| *v = 0.0);
        g.w.iter_mut().flatten().for_each(|v| *v = 0.0);
        let mut w = vec![0.0; self.dim];
        let mut gw = vec![0.0; self.dim];
        for s in &self.stats {
            m.combined_weight_into(s.pair, &mut w);
            s.gram_times(&w, &mut gw);
            for k in 0..self.dim {
                let v = gw[k] - s.xty[k];
                g.w0[k] += v;
                if self.mode == Mode::Transfer {
                    g.w[s.pair.a()][k] += 0.5 * v;
                    g.w[s.pair.b()][k] += 0.5 * v;
                }
            }
        }
    }

    /// Largest Hessian eigenvalue by 20 rounds of power iteration.
    fn lipschitz_estimate(&self) -> f64 {
        let d = self.dim;
        let n = self.n_sources;
        let mut v = TransferModel::zeros(d, n);
        v.w0.iter_mut().for_each(|x| *x = 1.0);
        if self.mode == Mode::Transfer {
            v.w.iter_mut().flatten().for_each(|x| *x = 1.0);
        }
        let mut hv = Gradient {
            w0: vec![0.0; d],
            w: vec![vec![0.0; d]; n],
        };
        let norm = |m: &TransferModel| -> f64 {
            m.w0.iter().chain(m.w.iter().flatten()).map(|x| x * x).sum::<f64>().sqrt()
        };
        let mut estimate = 0.0;
        for _ in 0..20 {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.w0.iter_mut().chain(v.w.iter_mut().flatten()).for_each(|x| *x /= nv);
            self.hessian_times(&v, &mut hv);
            let rayleigh: f64 = v
                .w0
                .iter()
                .chain(v.w.iter().flatten())
                .zip(hv.w0.iter().chain(hv.w.iter().flatten()))
                .map(|(a, b)| a * b)
                .sum();
            estimate = rayleigh;
            v.w0.copy_from_slice(&hv.w0);
            for (dst, src) in v.w.iter_mut().zip(&hv.w) {
                dst.copy_from_slice(src);
            }
        }
        estimate
    }

    fn hessian_times(&self, v: &TransferModel, out: &mut Gradient) {
        out.w0.iter_mut().for_each(|x| *x = 0.0);
        out.w.iter_mut().flatten().for_each(|x| *x = 0.0);
        let mut w = vec![0.0; self.dim];
        let mut gw = vec![0.0; self.dim];
        for s in &self.stats {
            v.combined_weight_into(s.pair, &mut w);
            s.gram_times(&w, &mut gw);
            for k in 0..self.dim {
                out.w0[k] += gw[k];
                if self.mode == Mode::Transfer {
                    out.w[s.pair.a()][k] += 0.5 * gw[k];
                    out.w[s.pair.b()][k] += 0.5 * gw[k];
                }
            }
        }
    }
}

/// Callback invoked with the current iterate after every accepted step
/// (and once for the initial point). Time spent inside it is excluded from
/// the trace's elapsed seconds.
pub type Observer<'a> = dyn FnMut(&TransferModel, &TraceRecord) + 'a;

pub fn fit_transfer(data: &Dataset, cfg: &SolverConfig) -> Result<(TransferModel, SolverTrace)> {
    fit_transfer_observed(data, cfg, &mut |_, _| {})
}

pub fn fit_transfer_observed(
    data: &Dataset,
    cfg: &SolverConfig,
    observer: &mut Observer<'_>,
) -> Result<(TransferModel, SolverTrace)> {
    if data.n_sources < 2 {
        return Err(Error::Argument(format!(
            "transfer fitting needs at least 2 sources, got {}",
            data.n_sources
        )));
    }
    // Screening: at or above lambda_max the optimality conditions hold with
    // every w_i = 0, so only w0 is left to fit. Iterating on the full problem
    // there stalls along a flat direction instead of landing on exact zeros.
    if cfg.lambda_a > 0.0 && cfg.validate().is_ok() && data.validate().is_ok() && !data.is_empty() {
        if let Ok(lmax) = lambda_max(data) {
            if cfg.lambda_a >= lmax {
                let (mut model, trace) = composite_descent(data, cfg, Mode::Pooled, observer)?;
                model.lambda_a = cfg.lambda_a;
                return Ok((model, trace));
            }
        }
    }
    composite_descent(data, cfg, Mode::Transfer, observer)
}

/// Baseline with every `w_i` held at zero: a single shared scoring vector.
pub fn fit_pooled(data: &Dataset, cfg: &SolverConfig) -> Result<(TransferModel, SolverTrace)> {
    fit_pooled_observed(data, cfg, &mut |_, _| {})
}

pub fn fit_pooled_observed(
    data: &Dataset,
    cfg: &SolverConfig,
    observer: &mut Observer<'_>,
) -> Result<(TransferModel, SolverTrace)> {
    composite_descent(data, cfg, Mode::Pooled, observer)
}

fn composite_descent(
    data: &Dataset,
    cfg: &SolverConfig,
    mode: Mode,
    observer: &mut Observer<'_>,
) -> Result<(TransferModel, SolverTrace)> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("cannot fit on an empty dataset".into()));
    }
    let start = Instant::now();
    let mut paused = Duration::ZERO;
    let problem = Problem::new(data, mode);
    let lambda = if mode == Mode::Pooled { 0.0 } else { cfg.lambda_a };

    let mut model = data.empty_model();
    model.lambda_a = lambda;
    let mut next = model.clone();
    let mut grad = Gradient {
        w0: vec![0.0; data.dim],
        w: vec![vec![0.0; data.dim]; data.n_sources],
    };

    let (mut step, backtrack) = match cfg.step {
        StepPolicy::Fixed(g) => (g, None),
        StepPolicy::Backtracking { initial, shrink } => {
            let g = initial.unwrap_or_else(|| {
                let l = problem.lipschitz_estimate();
                if l > 0.0 {
                    1.0 / l
                } else {
                    1.0
                }
            });
            (g, Some(shrink))
        }
    };

    let mut smooth = problem.loss(&model);
    let mut current = smooth + l1_penalty(&model, lambda);
    let mut trace = SolverTrace::default();
    let mut record = |iter: usize, objective: f64, step: f64, model: &TransferModel, paused: &mut Duration| {
        let rec = TraceRecord {
            iter,
            objective,
            step_size: step,
            elapsed_seconds: (start.elapsed() - *paused).as_secs_f64(),
        };
        let t = Instant::now();
        observer(model, &rec);
        *paused += t.elapsed();
        rec
    };
    trace.records.push(record(0, current, step, &model, &mut paused));

    for iter in 1..=cfg.max_iters {
        problem.gradient(&model, &mut grad);
        let (candidate_smooth, candidate) = loop {
            proximal_step(&model, &grad, step, lambda, mode, &mut next);
            let s = problem.loss(&next);
            let Some(shrink) = backtrack else {
                break (s, s + l1_penalty(&next, lambda));
            };
            if sufficient_decrease(&model, &next, &grad, smooth, s, step) {
                break (s, s + l1_penalty(&next, lambda));
            }
            step *= shrink;
            if step < f64::MIN_POSITIVE {
                return Err(Error::Divergence {
                    iter,
                    objective: current,
                });
            }
        };
        if !candidate.is_finite() {
            return Err(Error::Divergence {
                iter,
                objective: candidate,
            });
        }
        if backtrack.is_some() && candidate > current {
            // Only rounding can get here; the previous iterate is the answer.
            trace.converged = true;
            break;
        }
        std::mem::swap(&mut model, &mut next);
        let change = (current - candidate).abs() / current.abs().max(f64::MIN_POSITIVE);
        smooth = candidate_smooth;
        current = candidate;
        trace.records.push(record(iter, current, step, &model, &mut paused));
        if change < cfg.tol || current == 0.0 {
            trace.converged = true;
            break;
        }
    }
    Ok((model, trace))
}

fn proximal_step(
    model: &TransferModel,
    grad: &Gradient,
    step: f64,
    lambda: f64,
    mode: Mode,
    out: &mut TransferModel,
) {
    for k in 0..model.w0.len() {
        out.w0[k] = model.w0[k] - step * grad.w0[k];
    }
    if mode == Mode::Pooled {
        return;
    }
    let tau = step * lambda;
    for (i, wi) in model.w.iter().enumerate() {
        for (k, v) in wi.iter().enumerate() {
            out.w[i][k] = shrink(v - step * grad.w[i][k], tau);
        }
    }
}

/// `L(next) <= L(cur) + <g, next - cur> + |next - cur|^2 / (2 step)`.
fn sufficient_decrease(
    cur: &TransferModel,
    next: &TransferModel,
    grad: &Gradient,
    cur_loss: f64,
    next_loss: f64,
    step: f64,
) -> bool {
    let mut lin = 0.0;
    let mut sq = 0.0;
    let pairs = cur
        .w0
        .iter()
        .chain(cur.w.iter().flatten())
        .zip(next.w0.iter().chain(next.w.iter().flatten()))
        .zip(grad.w0.iter().chain(grad.w.iter().flatten()));
    for ((c, n), g) in pairs {
        let delta = n - c;
        lin += g * delta;
        sq += delta * delta;
    }
    let bound = cur_loss + lin + sq / (2.0 * step);
    next_loss <= bound + 1e-12 * cur_loss.abs()
}

/// Unregularized least-squares weights over all examples pooled.
pub fn pooled_least_squares(data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Argument("cannot fit on an empty dataset".into()));
    }
    let stats = PairStats::collect(data);
    let d = data.dim;
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for s in &stats {
        gram += DMatrix::from_row_slice(d, d, &s.gram);
        rhs += DVector::from_column_slice(&s.xty);
    }
    solve_spd(gram, rhs, 0.0)
}

/// Smallest `lambda_a` at which every `w_i` is zero at the optimum:
/// `max_i |grad_{w_i} L|_inf` evaluated at the pooled solution.
pub fn lambda_max(data: &Dataset) -> Result<f64> {
    let w0 = pooled_least_squares(data)?;
    let mut model = data.empty_model();
    model.w0 = w0;
    let problem = Problem::new(data, Mode::Transfer);
    let mut grad = Gradient {
        w0: vec![0.0; data.dim],
        w: vec![vec![0.0; data.dim]; data.n_sources],
    };
    problem.gradient(&model, &mut grad);
    Ok(grad.w.iter().flatten().fold(0.0, |m: f64, g| m.max(g.abs())))
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, ridge: f64) -> Result<Vec<f64>> {
    let d = a.nrows();
    let a = a + DMatrix::identity(d, d) * ridge;
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b).iter().copied().collect());
    }
    // Rank-deficient designs: minimum-norm solution.
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Validation(format!("least-squares solve failed: {e}")))?;
    Ok(x.iter().copied().collect())
}

/// Pairwise-independent baseline: one weight vector per source pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IndepModel {
    pub weights: BTreeMap<SourcePair, Vec<f64>>,
    pub dim: usize,
    pub n_sources: usize,
    pub warnings: Vec<String>,
}

impl IndepModel {
    pub fn weight(&self, pair: SourcePair) -> Option<&[f64]> {
        self.weights.get(&pair).map(Vec::as_slice)
    }
}

impl PairScorer for IndepModel {
    fn score(&self, pair: SourcePair, x: &[f64]) -> Result<f64> {
        pair.check(self.n_sources)?;
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self
            .weights
            .get(&pair)
            .map_or(0.0, |w| w.iter().zip(x).map(|(a, b)| a * b).sum()))
    }
}

/// Fits each pair by ridge regression with
/// `lambda = cfg.indep_ridge * trace(X^T X) / d`. Pairs without examples
/// get a zero vector and a warning.
pub fn fit_indep(data: &Dataset, cfg: &SolverConfig) -> Result<IndepModel> {
    cfg.validate()?;
    data.validate()?;
    let d = data.dim;
    let mut weights = BTreeMap::new();
    let mut warnings = Vec::new();
    let stats: BTreeMap<SourcePair, PairStats> =
        PairStats::collect(data).into_iter().map(|s| (s.pair, s)).collect();
    for pair in SourcePair::all(data.n_sources) {
        match stats.get(&pair) {
            Some(s) => {
                let gram = DMatrix::from_row_slice(d, d, &s.gram);
                let ridge = cfg.indep_ridge * gram.trace() / d as f64;
                let w = solve_spd(gram, DVector::from_column_slice(&s.xty), ridge)?;
                weights.insert(pair, w);
            }
            None => {
                warnings.push(format!("source pair {pair} has no training examples; it scores 0"));
                weights.insert(pair, vec![0.0; d]);
            }
        }
    }
    Ok(IndepModel {
        weights,
        dim: d,
        n_sources: data.n_sources,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;

    fn ex(x: Vec<f64>, a: usize, b: usize, y: Label) -> LabeledExample {
        LabeledExample {
            x,
            pair: SourcePair::new(a, b).unwrap(),
            y,
        }
    }

    fn small() -> Dataset {
        let examples = vec![
            ex(vec![1.0, 0.5], 0, 1, Label::Match),
            ex(vec![-0.5, 1.0], 0, 1, Label::NonMatch),
            ex(vec![0.3, -0.2], 1, 2, Label::Match),
            ex(vec![-1.0, -0.7], 0, 2, Label::NonMatch),
            ex(vec![0.8, 0.1], 0, 2, Label::Match),
        ];
        Dataset::new(examples, 3, 2).unwrap()
    }

    #[test]
    fn zero_model_objective_is_half_count() {
        let data = small();
        let m = TransferModel::zeros(2, 3);
        assert_eq!(objective(&m, &data, 3.0).unwrap(), 2.5);
    }

    #[test]
    fn single_example_gradient() {
        let data = Dataset::new(vec![ex(vec![2.0, -1.0], 0, 2, Label::Match)], 4, 2).unwrap();
        let g = loss_gradient(&TransferModel::zeros(2, 4), &data).unwrap();
        assert_eq!(g.w0, vec![-2.0, 1.0]);
        assert_eq!(g.w[0], vec![-1.0, 0.5]);
        assert_eq!(g.w[2], vec![-1.0, 0.5]);
        assert_eq!(g.w[1], vec![0.0, 0.0]);
        assert_eq!(g.w[3], vec![0.0, 0.0]);
    }

    #[test]
    fn gram_path_matches_direct_path() {
        let data = small();
        let mut m = TransferModel::zeros(2, 3);
        m.w0 = vec![0.4, -0.3];
        m.w[1] = vec![0.2, 0.9];
        m.w[2] = vec![-0.6, 0.1];
        let p = Problem::new(&data, Mode::Transfer);
        approx::assert_relative_eq!(p.loss(&m), loss(&m, &data).unwrap(), max_relative = 1e-12);
        let mut g = Gradient {
            w0: vec![0.0; 2],
            w: vec![vec![0.0; 2]; 3],
        };
        p.gradient(&m, &mut g);
        let direct = loss_gradient(&m, &data).unwrap();
        for (a, b) in g.w0.iter().chain(g.w.iter().flatten()).zip(direct.w0.iter().chain(direct.w.iter().flatten())) {
            approx::assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(&[1.0, -0.2, 0.3], 0.5).unwrap(), vec![0.5, 0.0, 0.0]);
        assert_eq!(soft_threshold(&[1.0, -0.2], 0.0).unwrap(), vec![1.0, -0.2]);
        assert_eq!(soft_threshold(&[0.0, 0.0], 4.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(soft_threshold(&[-3.0], 1.0).unwrap(), vec![-2.0]);
        assert!(soft_threshold(&[1.0], -0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            step: StepPolicy::Backtracking {
                initial: None,
                shrink: 1.0,
            },
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SolverConfig::default().with_lambda(-1.0).validate().is_err());
    }

    #[test]
    fn transfer_needs_two_sources_and_data() {
        let one = Dataset::new(vec![], 1, 2).unwrap();
        assert!(fit_transfer(&one, &SolverConfig::default()).is_err());
        let empty = Dataset::new(vec![], 3, 2).unwrap();
        assert!(fit_transfer(&empty, &SolverConfig::default()).is_err());
    }

    #[test]
    fn fixed_step_divergence_is_reported() {
        let data = small();
        let cfg = SolverConfig {
            step: StepPolicy::Fixed(50.0),
            max_iters: 100_000,
            ..SolverConfig::default()
        };
        match fit_transfer(&data, &cfg) {
            Err(Error::Divergence { iter, .. }) => assert!(iter > 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn pooled_keeps_source_vectors_zero() {
        let (m, trace) = fit_pooled(&small(), &SolverConfig::default()).unwrap();
        assert!(m.is_pooled());
        assert!(trace.converged);
    }

    #[test]
    fn indep_unseen_pair_scores_zero() {
        let data = Dataset::new(vec![ex(vec![1.0, 0.0], 0, 1, Label::Match)], 3, 2).unwrap();
        let m = fit_indep(&data, &SolverConfig::default()).unwrap();
        let unseen = SourcePair::new(1, 2).unwrap();
        assert_eq!(m.score(unseen, &[3.0, -4.0]).unwrap(), 0.0);
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn trace_csv_has_header() {
        let (_, trace) = fit_transfer(&small(), &SolverConfig::default()).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("iter,objective,step_size,elapsed_seconds\n"));
        assert_eq!(csv.lines().count(), trace.records.len() + 1);
    }
}
