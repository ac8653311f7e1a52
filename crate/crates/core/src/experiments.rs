//! Experiment harness: sample complexity, source complexity, runtime
//! trajectories and banded precision/recall grids.
//!
//! Every trial derives its own seed from the plan seed and runs
//! sequentially; trials run concurrently on the rayon pool and results are
//! collected in trial order, so reports do not depend on thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocking::BlockingConfig;
use crate::cv::{select_lambda_auto, CvConfig, PreprocessSpec};
use crate::error::{Error, Result};
use crate::eval::{
    band_curves, pr_curve, precision_at_recall, recall_grid, test_error, BandedCurve, MeanBand,
    PrCurve, ScoredExample,
};
use crate::features::{FeatureSpec, Preprocessor};
use crate::fixture::{candidate_pool, draw_balanced, generate_records, Candidate, CandidatePool, FixtureConfig};
use crate::io::write_text;
use crate::model::{PairScorer, SourcePair, TransferModel};
use crate::solver::{fit_indep, fit_pooled, fit_pooled_observed, fit_transfer_observed, Dataset, TraceRecord};
use crate::synth::{even_allocation, ring_allocation, stream_rng, uniform_allocation, SynthConfig, SynthWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Transfer,
    Pooled,
    Indep,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Transfer, Method::Pooled, Method::Indep];

    pub fn name(self) -> &'static str {
        match self {
            Method::Transfer => "transfer",
            Method::Pooled => "pooled",
            Method::Indep => "indep",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "transfer" => Ok(Method::Transfer),
            "pooled" => Ok(Method::Pooled),
            "indep" => Ok(Method::Indep),
            _ => Err(Error::Argument(format!("unknown method {text:?}; expected transfer, pooled or indep"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PrGrid,
    Summary,
    SampleComplexity,
    SourceComplexity,
    Runtime,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::PrGrid => "pr_grid",
            Family::Summary => "summary",
            Family::SampleComplexity => "sample_complexity",
            Family::SourceComplexity => "source_complexity",
            Family::Runtime => "runtime",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.replace('-', "_").as_str() {
            "pr_grid" => Ok(Family::PrGrid),
            "summary" => Ok(Family::Summary),
            "sample_complexity" => Ok(Family::SampleComplexity),
            "source_complexity" => Ok(Family::SourceComplexity),
            "runtime" => Ok(Family::Runtime),
            _ => Err(Error::Argument(format!("unknown experiment family {text:?}"))),
        }
    }
}

/// How a labeling budget is spread over source pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// The same count on every source pair.
    PerPair(usize),
    /// `n` labels per source, on a ring of pairs (linear in the source count).
    PerSource(usize),
    /// A fixed total spread evenly over all pairs.
    Total(usize),
}

impl Budget {
    pub fn allocation(self, n_sources: usize) -> BTreeMap<SourcePair, usize> {
        match self {
            Budget::PerPair(n) => uniform_allocation(n_sources, n),
            Budget::PerSource(n) => ring_allocation(n_sources, n),
            Budget::Total(n) => even_allocation(n_sources, n),
        }
    }

    pub fn label(self) -> String {
        match self {
            Budget::PerPair(n) => format!("per_pair_{n}"),
            Budget::PerSource(n) => format!("per_source_{n}"),
            Budget::Total(n) => format!("total_{n}"),
        }
    }

    fn value(self) -> usize {
        match self {
            Budget::PerPair(n) | Budget::PerSource(n) | Budget::Total(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub family: Family,
    /// Generator settings; the seed is replaced by each trial's own.
    pub synth: SynthConfig,
    pub fixture: FixtureConfig,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    /// Labeling budgets (one row each for the precision/recall grid).
    pub budgets: Vec<Budget>,
    /// Source counts for the source-complexity sweep.
    pub source_counts: Vec<usize>,
    /// Labels added with each source in the source-complexity sweep.
    pub labels_per_source: usize,
    /// Synthetic test pairs per trial, spread evenly over source pairs.
    pub test_pairs: usize,
    /// Share of the evaluation pair's candidates kept for testing.
    pub pr_test_fraction: f64,
    pub recall_target: f64,
    pub recall_points: usize,
    pub cv: CvConfig,
}

impl ExperimentPlan {
    fn base(family: Family) -> Self {
        ExperimentPlan {
            family,
            synth: SynthConfig::default(),
            fixture: FixtureConfig::default(),
            methods: Method::ALL.to_vec(),
            trials: 20,
            seed: 0,
            budgets: Vec::new(),
            source_counts: Vec::new(),
            labels_per_source: 0,
            test_pairs: 10_000,
            pr_test_fraction: 0.5,
            recall_target: 0.85,
            recall_points: 20,
            cv: CvConfig {
                preprocess: PreprocessSpec {
                    standardize: true,
                    append_constant: true,
                },
                ..CvConfig::default()
            },
        }
    }

    pub fn sample_complexity() -> Self {
        ExperimentPlan {
            budgets: [10, 25, 50, 100, 200].map(Budget::PerPair).to_vec(),
            ..Self::base(Family::SampleComplexity)
        }
    }

    pub fn source_complexity() -> Self {
        ExperimentPlan {
            trials: 50,
            source_counts: vec![2, 4, 6, 8, 10],
            labels_per_source: 400,
            ..Self::base(Family::SourceComplexity)
        }
    }

    pub fn runtime() -> Self {
        ExperimentPlan {
            trials: 10,
            budgets: [20, 100].map(Budget::PerPair).to_vec(),
            ..Self::base(Family::Runtime)
        }
    }

    pub fn pr_grid() -> Self {
        ExperimentPlan {
            budgets: vec![Budget::Total(60), Budget::PerSource(50), Budget::PerPair(60)],
            ..Self::base(Family::PrGrid)
        }
    }

    pub fn summary() -> Self {
        ExperimentPlan {
            family: Family::Summary,
            ..Self::pr_grid()
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::PrGrid => Self::pr_grid(),
            Family::Summary => Self::summary(),
            Family::SampleComplexity => Self::sample_complexity(),
            Family::SourceComplexity => Self::source_complexity(),
            Family::Runtime => Self::runtime(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Argument("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Argument("no methods selected".into()));
        }
        match self.family {
            Family::SourceComplexity => {
                if self.source_counts.is_empty() || self.source_counts.iter().any(|&n| n < 2) {
                    return Err(Error::Argument("source counts must be nonempty and each at least 2".into()));
                }
                if self.labels_per_source == 0 {
                    return Err(Error::Argument("labels per source must be positive".into()));
                }
            }
            _ => {
                if self.budgets.is_empty() || self.budgets.iter().any(|b| b.value() == 0) {
                    return Err(Error::Argument("budgets must be nonempty and positive".into()));
                }
            }
        }
        if !(self.recall_target > 0.0 && self.recall_target <= 1.0) {
            return Err(Error::Argument(format!("recall target must lie in (0, 1], got {}", self.recall_target)));
        }
        if !(self.pr_test_fraction > 0.0 && self.pr_test_fraction < 1.0) {
            return Err(Error::Argument("pr test fraction must lie in (0, 1)".into()));
        }
        self.synth.validate()
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        stream_rng(self.seed, 3 << 32 | trial as u64).next_u64()
    }
}

/// Outcome of one (method, budget, trial) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCell {
    pub method: Method,
    /// Index into [`ExperimentReport::budget_labels`].
    pub budget: usize,
    pub trial: usize,
    pub test_error: Option<f64>,
    pub precision_at_recall: Option<f64>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub seconds: f64,
    pub failure: Option<String>,
}

/// One checkpoint of a runtime trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimePoint {
    pub method: Method,
    pub budget: usize,
    pub trial: usize,
    pub iter: usize,
    pub elapsed_seconds: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrRow {
    pub method: Method,
    pub budget: usize,
    pub curve: BandedCurve,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    /// Column name for the budget axis.
    pub budget_column: String,
    pub budget_labels: Vec<String>,
    pub cells: Vec<TrialCell>,
    pub runtime: Vec<RuntimePoint>,
    pub pr: Vec<PrRow>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn budget_index(&self, label: &str) -> Option<usize> {
        self.budget_labels.iter().position(|l| l == label)
    }

    fn cells_for(&self, method: Method, budget: usize) -> impl Iterator<Item = &TrialCell> {
        self.cells.iter().filter(move |c| c.method == method && c.budget == budget)
    }

    pub fn mean_error(&self, method: Method, budget: usize) -> Option<MeanBand> {
        let v: Vec<f64> = self.cells_for(method, budget).filter_map(|c| c.test_error).collect();
        MeanBand::from_values(&v)
    }

    pub fn mean_precision_at_recall(&self, method: Method, budget: usize) -> Option<MeanBand> {
        let v: Vec<f64> = self.cells_for(method, budget).filter_map(|c| c.precision_at_recall).collect();
        MeanBand::from_values(&v)
    }

    pub fn failures(&self, method: Method, budget: usize) -> usize {
        self.cells_for(method, budget).filter(|c| c.failure.is_some()).count()
    }

    pub fn total_failures(&self) -> usize {
        self.cells.iter().filter(|c| c.failure.is_some()).count()
    }

    /// Mean error by method and budget with 95% bands.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("method,{},mean_error,lo,hi,trials,failed\n", self.budget_column);
        for &m in &self.plan.methods {
            for (b, label) in self.budget_labels.iter().enumerate() {
                let failed = self.failures(m, b);
                match self.mean_error(m, b) {
                    Some(band) => writeln!(
                        out,
                        "{},{label},{},{},{},{},{failed}",
                        m.name(),
                        band.mean,
                        band.lower(),
                        band.upper(),
                        band.n
                    ),
                    None => writeln!(out, "{},{label},,,,0,{failed}", m.name()),
                }
                .unwrap();
            }
        }
        out
    }

    /// One row per cell; contains no timing.
    pub fn trials_csv(&self) -> String {
        let mut out = format!(
            "method,{},trial,test_error,precision_at_recall,lambda,iterations,failure\n",
            self.budget_column
        );
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.method.name(),
                self.budget_labels[c.budget],
                c.trial,
                opt(c.test_error),
                opt(c.precision_at_recall),
                opt(c.lambda),
                c.iterations.map(|i| i.to_string()).unwrap_or_default(),
                c.failure.as_deref().unwrap_or("").replace([',', '\n'], ";")
            )
            .unwrap();
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = format!("method,{},trial,seconds\n", self.budget_column);
        for c in &self.cells {
            writeln!(out, "{},{},{},{}", c.method.name(), self.budget_labels[c.budget], c.trial, c.seconds).unwrap();
        }
        out
    }

    pub fn runtime_csv(&self) -> String {
        let mut out = format!("method,{},trial,iter,elapsed_seconds,test_error\n", self.budget_column);
        for p in &self.runtime {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.method.name(),
                self.budget_labels[p.budget],
                p.trial,
                p.iter,
                p.elapsed_seconds,
                p.test_error
            )
            .unwrap();
        }
        out
    }

    pub fn pr_curves_csv(&self) -> String {
        let mut out = format!("method,{},recall,mean_precision,lo,hi\n", self.budget_column);
        for row in &self.pr {
            let c = &row.curve;
            for i in 0..c.recall.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    row.method.name(),
                    self.budget_labels[row.budget],
                    c.recall[i],
                    c.mean[i],
                    c.lower[i],
                    c.upper[i]
                )
                .unwrap();
            }
        }
        out
    }

    pub fn pr_summary_csv(&self) -> String {
        let mut out = format!("method,{},recall,mean_precision,lo,hi,trials\n", self.budget_column);
        for &m in &self.plan.methods {
            for (b, label) in self.budget_labels.iter().enumerate() {
                if let Some(band) = self.mean_precision_at_recall(m, b) {
                    writeln!(
                        out,
                        "{},{label},{},{},{},{},{}",
                        m.name(),
                        self.plan.recall_target,
                        band.mean,
                        band.lower(),
                        band.upper(),
                        band.n
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    /// Writes `plan.json`, the family's CSVs and `warnings.log` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut plan = serde_json::to_string_pretty(&self.plan)?;
        plan.push('\n');
        write_text(&dir.join("plan.json"), &plan)?;
        let family = self.plan.family.name();
        write_text(&dir.join(format!("{family}.csv")), &self.summary_csv())?;
        write_text(&dir.join(format!("{family}_trials.csv")), &self.trials_csv())?;
        write_text(&dir.join(format!("{family}_timing.csv")), &self.timing_csv())?;
        if !self.runtime.is_empty() {
            write_text(&dir.join("runtime_trajectories.csv"), &self.runtime_csv())?;
        }
        if matches!(self.plan.family, Family::PrGrid | Family::Summary) {
            write_text(&dir.join("precision_at_recall.csv"), &self.pr_summary_csv())?;
            if self.plan.family == Family::PrGrid {
                write_text(&dir.join("pr_curves.csv"), &self.pr_curves_csv())?;
            }
        }
        let mut log = self.warnings.join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        write_text(&dir.join("warnings.log"), &log)
    }
}

/// A fitted method together with the preprocessing it was trained with.
pub struct Fitted {
    pub method: Method,
    pub scorer: Box<dyn PairScorer + Send>,
    pub preprocessor: Preprocessor,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub warnings: Vec<String>,
}

impl Fitted {
    pub fn score(&self, data: &Dataset) -> Result<Vec<ScoredExample>> {
        data.examples
            .iter()
            .map(|ex| {
                Ok(ScoredExample {
                    score: self.scorer.score(ex.pair, &self.preprocessor.apply(&ex.x))?,
                    y: ex.y,
                    pair: ex.pair,
                })
            })
            .collect()
    }
}

/// Fits one method on `train`: transfer picks its sparsity weight with
/// [`select_lambda_auto`], the baselines use the plan's preprocessing.
pub fn fit_method(method: Method, train: &Dataset, cv: &CvConfig) -> Result<Fitted> {
    match method {
        Method::Transfer => {
            let r = select_lambda_auto(train, cv)?;
            Ok(Fitted {
                method,
                lambda: Some(r.chosen),
                iterations: Some(r.trace.iterations()),
                scorer: Box::new(r.model),
                preprocessor: r.preprocessor,
                warnings: r.warnings,
            })
        }
        Method::Pooled => {
            let pre = cv.preprocess.fit(train)?;
            let (model, trace) = fit_pooled(&pre.apply_dataset(train)?, &cv.solver)?;
            Ok(Fitted {
                method,
                lambda: None,
                iterations: Some(trace.iterations()),
                scorer: Box::new(model),
                preprocessor: pre,
                warnings: Vec::new(),
            })
        }
        Method::Indep => {
            let pre = cv.preprocess.fit(train)?;
            let model = fit_indep(&pre.apply_dataset(train)?, &cv.solver)?;
            Ok(Fitted {
                method,
                lambda: None,
                iterations: None,
                warnings: model.warnings.clone(),
                scorer: Box::new(model),
                preprocessor: pre,
            })
        }
    }
}

fn failed_cell(method: Method, budget: usize, trial: usize, seconds: f64, e: &Error) -> TrialCell {
    TrialCell {
        method,
        budget,
        trial,
        test_error: None,
        precision_at_recall: None,
        lambda: None,
        iterations: None,
        seconds,
        failure: Some(e.to_string()),
    }
}

/// Fits and evaluates every method; failures become marked cells.
fn evaluate_methods(
    plan: &ExperimentPlan,
    budget: usize,
    trial: usize,
    train: &Dataset,
    test: &Dataset,
    cv: &CvConfig,
    warnings: &mut Vec<String>,
) -> (Vec<TrialCell>, Vec<(Method, Vec<ScoredExample>)>) {
    let mut cells = Vec::new();
    let mut scored_all = Vec::new();
    for &method in &plan.methods {
        let start = Instant::now();
        let outcome = fit_method(method, train, cv).and_then(|f| {
            let scored = f.score(test)?;
            Ok((f, scored))
        });
        let seconds = start.elapsed().as_secs_f64();
        match outcome {
            Ok((f, scored)) => {
                let error = test_error(&scored, 0.0).ok();
                let par = if matches!(plan.family, Family::PrGrid | Family::Summary) {
                    pr_curve(&scored).ok().map(|c| precision_at_recall(&c, plan.recall_target))
                } else {
                    None
                };
                let label = format!("trial {trial} budget {budget} {}", method.name());
                warnings.extend(f.warnings.iter().map(|w| format!("{label}: {w}")));
                cells.push(TrialCell {
                    method,
                    budget,
                    trial,
                    test_error: error,
                    precision_at_recall: par,
                    lambda: f.lambda,
                    iterations: f.iterations,
                    seconds,
                    failure: None,
                });
                scored_all.push((method, scored));
            }
            Err(e) => {
                warnings.push(format!("trial {trial} budget {budget} {}: failed: {e}", method.name()));
                cells.push(failed_cell(method, budget, trial, seconds, &e));
            }
        }
    }
    (cells, scored_all)
}

struct TrialOutput {
    cells: Vec<TrialCell>,
    runtime: Vec<RuntimePoint>,
    curves: Vec<(Method, usize, PrCurve)>,
    warnings: Vec<String>,
}

impl TrialOutput {
    fn new() -> Self {
        TrialOutput {
            cells: Vec::new(),
            runtime: Vec::new(),
            curves: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

fn run_trials<F>(plan: &ExperimentPlan, trial_fn: F) -> Vec<TrialOutput>
where
    F: Fn(usize, u64) -> Result<TrialOutput> + Sync,
{
    (0..plan.trials)
        .into_par_iter()
        .map(|t| {
            trial_fn(t, plan.trial_seed(t)).unwrap_or_else(|e| {
                let mut out = TrialOutput::new();
                out.warnings.push(format!("trial {t}: setup failed: {e}"));
                out
            })
        })
        .collect()
}

fn assemble(
    plan: &ExperimentPlan,
    budget_column: &str,
    budget_labels: Vec<String>,
    outputs: Vec<TrialOutput>,
) -> ExperimentReport {
    let mut report = ExperimentReport {
        plan: plan.clone(),
        budget_column: budget_column.into(),
        budget_labels,
        cells: Vec::new(),
        runtime: Vec::new(),
        pr: Vec::new(),
        warnings: Vec::new(),
    };
    let mut curves: BTreeMap<(usize, Method), Vec<PrCurve>> = BTreeMap::new();
    let mut present: BTreeSet<(usize, Method, usize)> = BTreeSet::new();
    for (t, out) in outputs.into_iter().enumerate() {
        for c in &out.cells {
            present.insert((c.budget, c.method, t));
        }
        report.cells.extend(out.cells);
        report.runtime.extend(out.runtime);
        report.warnings.extend(out.warnings);
        for (m, b, c) in out.curves {
            curves.entry((b, m)).or_default().push(c);
        }
    }
    // Cells lost to a failed trial setup are marked rather than dropped.
    for b in 0..report.budget_labels.len() {
        for &m in &plan.methods {
            for t in 0..plan.trials {
                if !present.contains(&(b, m, t)) {
                    report.cells.push(failed_cell(m, b, t, 0.0, &Error::Argument("trial setup failed".into())));
                }
            }
        }
    }
    report.cells.sort_by_key(|c| (c.budget, c.method, c.trial));

    let grid = recall_grid(plan.recall_points);
    for b in 0..report.budget_labels.len() {
        for &m in &plan.methods {
            let Some(cs) = curves.get(&(b, m)) else { continue };
            let banded = if cs.len() >= 2 {
                band_curves(cs, &grid)
            } else {
                Err(Error::Argument("single trial".into()))
            };
            if let Ok(curve) = banded {
                report.pr.push(PrRow { method: m, budget: b, curve });
            }
        }
    }
    let failures = report.total_failures();
    if failures > 0 {
        report.warnings.push(format!("{failures} cell(s) failed and were excluded from means"));
    }
    report
}

fn trial_synth(plan: &ExperimentPlan, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ..plan.synth.clone()
    }
}

fn trial_cv(plan: &ExperimentPlan, seed: u64) -> CvConfig {
    CvConfig {
        seed,
        ..plan.cv.clone()
    }
}

/// Samples the largest per-pair budget once and takes nested prefixes for
/// the smaller ones; the test set is drawn afterwards from the same pairs.
fn nested_per_pair(
    world: &SynthWorld,
    budgets: &[usize],
    test_pairs: usize,
) -> Result<(Vec<Dataset>, Dataset)> {
    let n = world.n_sources();
    let top = budgets.iter().copied().max().unwrap_or(0);
    let mut sampler = world.sampler();
    let mut per_pair = BTreeMap::new();
    for pair in SourcePair::all(n) {
        per_pair.insert(pair, sampler.sample(pair, top)?);
    }
    let test_refs = sampler.sample_allocation(&even_allocation(n, test_pairs))?;
    let trains = budgets
        .iter()
        .map(|&k| {
            let refs: Vec<_> = per_pair.values().flat_map(|v| v[..k].iter().copied()).collect();
            world.dataset(&refs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trains, world.dataset(&test_refs)?))
}

fn per_pair_budgets(plan: &ExperimentPlan) -> Result<Vec<usize>> {
    plan.budgets
        .iter()
        .map(|b| match *b {
            Budget::PerPair(n) => Ok(n),
            other => Err(Error::Argument(format!(
                "{} expects per-pair budgets, got {}",
                plan.family.name(),
                other.label()
            ))),
        })
        .collect()
}

/// Test error against examples per source pair.
pub fn run_sample_complexity(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let budgets = per_pair_budgets(plan)?;
    let outputs = run_trials(plan, |t, seed| {
        let world = SynthWorld::new(&trial_synth(plan, seed))?;
        let (trains, test) = nested_per_pair(&world, &budgets, plan.test_pairs)?;
        let cv = trial_cv(plan, seed);
        let mut out = TrialOutput::new();
        for (b, train) in trains.iter().enumerate() {
            let (cells, _) = evaluate_methods(plan, b, t, train, &test, &cv, &mut out.warnings);
            out.cells.extend(cells);
        }
        Ok(out)
    });
    let labels = budgets.iter().map(|b| b.to_string()).collect();
    Ok(assemble(plan, "examples_per_pair", labels, outputs))
}

/// Test error against the number of sources under a linear labeling
/// budget: each source adds `labels_per_source` labels on a ring of pairs.
pub fn run_source_complexity(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let counts = plan.source_counts.clone();
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("source counts must be strictly increasing".into()));
    }
    let outputs = run_trials(plan, |t, seed| {
        let cv = trial_cv(plan, seed);
        let mut out = TrialOutput::new();
        for (b, &n) in counts.iter().enumerate() {
            let world = SynthWorld::new(&SynthConfig {
                n_sources: n,
                ..trial_synth(plan, seed)
            })?;
            let mut sampler = world.sampler();
            let train = world.dataset(&sampler.sample_allocation(&ring_allocation(n, plan.labels_per_source))?)?;
            let test = world.dataset(&sampler.sample_allocation(&even_allocation(n, plan.test_pairs))?)?;
            let (cells, _) = evaluate_methods(plan, b, t, &train, &test, &cv, &mut out.warnings);
            out.cells.extend(cells);
        }
        Ok(out)
    });
    let labels = counts.iter().map(|n| n.to_string()).collect();
    Ok(assemble(plan, "sources", labels, outputs))
}

/// Iterations at which the runtime trajectory evaluates test error:
/// 0, 1, 2, 4, 8, ...
fn is_checkpoint(iter: usize) -> bool {
    iter == 0 || iter.is_power_of_two()
}

fn trajectory(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    cv: &CvConfig,
    budget: usize,
    trial: usize,
) -> Result<(Vec<RuntimePoint>, Fitted)> {
    if method == Method::Indep {
        let start = Instant::now();
        let fitted = fit_method(method, train, cv)?;
        let seconds = start.elapsed().as_secs_f64();
        let error = test_error(&fitted.score(test)?, 0.0)?;
        let point = RuntimePoint {
            method,
            budget,
            trial,
            iter: 0,
            elapsed_seconds: seconds,
            test_error: error,
        };
        return Ok((vec![point], fitted));
    }
    let (pre, solver) = match method {
        Method::Transfer => {
            let r = select_lambda_auto(train, cv)?;
            (r.preprocessor, cv.solver.clone().with_lambda(r.chosen))
        }
        _ => (cv.preprocess.fit(train)?, cv.solver.clone()),
    };
    let train_pp = pre.apply_dataset(train)?;
    let test_pp = pre.apply_dataset(test)?;
    let mut points = Vec::new();
    let mut failure = None;
    let mut observe = |m: &TransferModel, r: &TraceRecord| {
        if !is_checkpoint(r.iter) || failure.is_some() {
            return;
        }
        let scored: Result<Vec<ScoredExample>> = test_pp
            .examples
            .iter()
            .map(|ex| {
                Ok(ScoredExample {
                    score: m.score(ex.pair, &ex.x)?,
                    y: ex.y,
                    pair: ex.pair,
                })
            })
            .collect();
        match scored.and_then(|s| test_error(&s, 0.0)) {
            Ok(e) => points.push(RuntimePoint {
                method,
                budget,
                trial,
                iter: r.iter,
                elapsed_seconds: r.elapsed_seconds,
                test_error: e,
            }),
            Err(e) => failure = Some(e),
        }
    };
    let (model, trace) = match method {
        Method::Transfer => fit_transfer_observed(&train_pp, &solver, &mut observe)?,
        _ => fit_pooled_observed(&train_pp, &solver, &mut observe)?,
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let last = trace.records.last().expect("trace has the initial record");
    let fitted = Fitted {
        method,
        lambda: (method == Method::Transfer).then_some(solver.lambda_a),
        iterations: Some(trace.iterations()),
        scorer: Box::new(model),
        preprocessor: pre,
        warnings: Vec::new(),
    };
    if points.last().is_none_or(|p| p.iter != last.iter) {
        points.push(RuntimePoint {
            method,
            budget,
            trial,
            iter: last.iter,
            elapsed_seconds: last.elapsed_seconds,
            test_error: test_error(&fitted.score(test)?, 0.0)?,
        });
    }
    Ok((points, fitted))
}

/// Test error against solver wall-clock. The final point of each
/// trajectory is the converged model; the independent baseline is a single
/// closed-form point.
pub fn run_runtime(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let budgets = per_pair_budgets(plan)?;
    let outputs = run_trials(plan, |t, seed| {
        let world = SynthWorld::new(&trial_synth(plan, seed))?;
        let (trains, test) = nested_per_pair(&world, &budgets, plan.test_pairs)?;
        let cv = trial_cv(plan, seed);
        let mut out = TrialOutput::new();
        for (b, train) in trains.iter().enumerate() {
            for &method in &plan.methods {
                let start = Instant::now();
                match trajectory(method, train, &test, &cv, b, t) {
                    Ok((points, fitted)) => {
                        out.cells.push(TrialCell {
                            method,
                            budget: b,
                            trial: t,
                            test_error: points.last().map(|p| p.test_error),
                            precision_at_recall: None,
                            lambda: fitted.lambda,
                            iterations: fitted.iterations,
                            seconds: start.elapsed().as_secs_f64(),
                            failure: None,
                        });
                        out.runtime.extend(points);
                    }
                    Err(e) => {
                        out.warnings.push(format!("trial {t} budget {b} {}: failed: {e}", method.name()));
                        out.cells.push(failed_cell(method, b, t, start.elapsed().as_secs_f64(), &e));
                    }
                }
            }
        }
        Ok(out)
    });
    let labels = budgets.iter().map(|b| b.to_string()).collect();
    Ok(assemble(plan, "examples_per_pair", labels, outputs))
}

/// Blocked, featurized candidates of the toy movie fixture.
pub fn fixture_pool(cfg: &FixtureConfig) -> Result<CandidatePool> {
    let records = generate_records(cfg);
    Ok(candidate_pool(&records, &FeatureSpec::default(), &BlockingConfig::default())?.0)
}

/// Banded precision/recall curves on the fixture's evaluation pair, one
/// row per budget, plus precision at the plan's recall target.
pub fn run_pr_grid(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let pool = fixture_pool(&plan.fixture)?;
    let eval_pair = pool.eval_pair()?;
    let n_sources = pool.registry.len();
    let outputs = run_trials(plan, |t, seed| {
        let mut rng = stream_rng(seed, 7);
        let mut available = pool.by_pair.clone();
        let eval = available.get_mut(&eval_pair).ok_or(Error::NoPositives)?;
        let n_test = (eval.len() as f64 * plan.pr_test_fraction).round() as usize;
        let test_cands = crate::fixture::split_off_random(eval, n_test, &mut rng);
        let test = pool.dataset(&test_cands.iter().collect::<Vec<_>>())?;
        let cv = trial_cv(plan, seed);
        let mut out = TrialOutput::new();
        for (b, budget) in plan.budgets.iter().enumerate() {
            let mut rows = available.clone();
            let mut row_rng = stream_rng(seed, 8 + b as u64);
            let mut train: Vec<Candidate> = Vec::new();
            for (pair, n) in budget.allocation(n_sources) {
                if let Some(cands) = rows.get_mut(&pair) {
                    train.extend(draw_balanced(cands, n, &mut row_rng));
                }
            }
            let train = pool.dataset(&train.iter().collect::<Vec<_>>())?;
            let (cells, scored) = evaluate_methods(plan, b, t, &train, &test, &cv, &mut out.warnings);
            out.cells.extend(cells);
            for (m, s) in scored {
                if let Ok(c) = pr_curve(&s) {
                    out.curves.push((m, b, c));
                }
            }
        }
        Ok(out)
    });
    let labels = plan.budgets.iter().map(|b| b.label()).collect();
    let mut report = assemble(plan, "budget", labels, outputs);
    if plan.trials == 1 {
        report.warnings.push("single trial: precision/recall bands omitted".into());
    }
    Ok(report)
}

/// Dispatches on the plan's family. The summary family is the grid
/// without per-recall curves.
pub fn run(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    match plan.family {
        Family::SampleComplexity => run_sample_complexity(plan),
        Family::SourceComplexity => run_source_complexity(plan),
        Family::Runtime => run_runtime(plan),
        Family::PrGrid => run_pr_grid(plan),
        Family::Summary => {
            let mut r = run_pr_grid(plan)?;
            r.pr.clear();
            Ok(r)
        }
    }
}
