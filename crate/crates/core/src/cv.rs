//! Choosing the sparsity weight by held-out test error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{test_error, ScoredExample};
use crate::features::Preprocessor;
use crate::io::write_text;
use crate::model::{SourcePair, TransferModel};
use crate::solver::{fit_transfer, lambda_max, Dataset, SolverConfig, SolverTrace};

/// Candidate values of the sparsity weight, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub lambdas: Vec<f64>,
}

impl ParamGrid {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Argument("lambda grid is empty".into()));
        }
        if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Argument("lambda grid values must be positive and finite".into()));
        }
        if lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("lambda grid must be strictly increasing".into()));
        }
        Ok(ParamGrid { lambdas })
    }

    /// `points` values log-spaced over `[ratio * top, top]`.
    pub fn log_spaced(top: f64, ratio: f64, points: usize) -> Result<Self> {
        if points == 0 || !(ratio > 0.0 && ratio <= 1.0) || !(top > 0.0 && top.is_finite()) {
            return Err(Error::Argument(format!(
                "invalid grid: top={top}, ratio={ratio}, points={points}"
            )));
        }
        if points == 1 {
            return ParamGrid::new(vec![top]);
        }
        let lo = (ratio * top).ln();
        let hi = top.ln();
        let step = (hi - lo) / (points - 1) as f64;
        let mut lambdas: Vec<f64> = (0..points).map(|i| (lo + step * i as f64).exp()).collect();
        lambdas[points - 1] = top;
        lambdas.dedup();
        ParamGrid::new(lambdas)
    }

    /// Default grid: 10 points over `[1e-4 * lambda_max, lambda_max]` for
    /// `data`. When every source term is already optimal at zero the grid
    /// falls back to `lambda_max = 1`.
    pub fn for_data(data: &Dataset, points: usize, ratio: f64) -> Result<Self> {
        let top = lambda_max(data)?;
        let top = if top > 0.0 && top.is_finite() { top } else { 1.0 };
        ParamGrid::log_spaced(top, ratio, points)
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// How features are preprocessed before each fit. The preprocessor is
/// always fitted on the training part only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub standardize: bool,
    pub append_constant: bool,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            standardize: true,
            append_constant: false,
        }
    }
}

impl PreprocessSpec {
    pub fn fit(&self, train: &Dataset) -> Result<Preprocessor> {
        Preprocessor::fit(train, self.standardize, self.append_constant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub holdout_fraction: f64,
    /// `Some(k)` switches from a single hold-out split to k-fold.
    pub folds: Option<usize>,
    pub grid_points: usize,
    pub grid_ratio: f64,
    pub preprocess: PreprocessSpec,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            holdout_fraction: 0.2,
            folds: None,
            grid_points: 10,
            grid_ratio: 1e-4,
            preprocess: PreprocessSpec::default(),
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

/// Index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
    pub warnings: Vec<String>,
}

fn strata(data: &Dataset) -> BTreeMap<(SourcePair, bool), Vec<usize>> {
    let mut out: BTreeMap<(SourcePair, bool), Vec<usize>> = BTreeMap::new();
    for (i, ex) in data.examples.iter().enumerate() {
        out.entry((ex.pair, ex.y.is_match())).or_default().push(i);
    }
    out
}

fn stratum_name(key: &(SourcePair, bool)) -> String {
    format!("pair {} label {}", key.0, if key.1 { 1 } else { 0 })
}

/// Stratified by (source pair, label): each stratum of size `s >= 2`
/// contributes `round(s * fraction)` examples to the hold-out, clamped to
/// `[1, s - 1]`. Smaller strata go to train with a warning.
pub fn holdout_split(data: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        holdout: Vec::new(),
        warnings: Vec::new(),
    };
    for (key, mut idx) in strata(data) {
        if idx.len() < 2 {
            split.warnings.push(format!("{} has {} example(s); kept in train", stratum_name(&key), idx.len()));
            split.train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_hold = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        split.holdout.extend_from_slice(&idx[..n_hold]);
        split.train.extend_from_slice(&idx[n_hold..]);
    }
    split.train.sort_unstable();
    split.holdout.sort_unstable();
    Ok(split)
}

/// Stratified k-fold: each stratum is shuffled and dealt round-robin into
/// `k` folds, continuing where the previous stratum stopped so fold sizes
/// stay within one of each other.
pub fn kfold_splits(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Argument(format!("k-fold needs k >= 2, got {k}")));
    }
    if data.len() < k {
        return Err(Error::Argument(format!("{} examples cannot fill {k} folds", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; data.len()];
    let mut next = 0;
    for (_, mut idx) in strata(data) {
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (holdout, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| fold_of[i] == f);
            Split {
                train,
                holdout,
                warnings: Vec::new(),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    /// Mean held-out test error per grid value; `None` when the fit failed.
    pub errors: Vec<Option<f64>>,
    pub chosen: f64,
    pub model: TransferModel,
    pub preprocessor: Preprocessor,
    pub trace: SolverTrace,
    pub warnings: Vec<String>,
}

impl CvResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,holdout_error\n");
        for (l, e) in self.lambdas.iter().zip(&self.errors) {
            match e {
                Some(e) => writeln!(out, "{l},{e}").unwrap(),
                None => writeln!(out, "{l},").unwrap(),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

/// Held-out test error at threshold 0.
pub fn holdout_error(model: &TransferModel, holdout: &Dataset) -> Result<f64> {
    let scored: Vec<ScoredExample> = holdout
        .examples
        .iter()
        .map(|ex| {
            Ok(ScoredExample {
                score: model.score(ex.pair, &ex.x)?,
                y: ex.y,
                pair: ex.pair,
            })
        })
        .collect::<Result<_>>()?;
    test_error(&scored, 0.0)
}

struct Fold {
    train: Dataset,
    holdout: Dataset,
}

fn prepare_folds(data: &Dataset, cfg: &CvConfig, warnings: &mut Vec<String>) -> Result<Vec<Fold>> {
    let splits = match cfg.folds {
        Some(k) => kfold_splits(data, k, cfg.seed)?,
        None => vec![holdout_split(data, cfg.holdout_fraction, cfg.seed)?],
    };
    splits
        .into_iter()
        .map(|s| {
            warnings.extend(s.warnings);
            let train = data.subset(&s.train);
            let pre = cfg.preprocess.fit(&train)?;
            Ok(Fold {
                train: pre.apply_dataset(&train)?,
                holdout: pre.apply_dataset(&data.subset(&s.holdout))?,
            })
        })
        .collect()
}

/// Fits every grid value on the training part, scores the hold-out at
/// threshold 0, keeps the minimum (ties go to the larger value) and refits
/// on all of `data`. Grid values whose fit diverges are skipped.
pub fn select_lambda(data: &Dataset, grid: &ParamGrid, cfg: &CvConfig) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Argument("lambda grid is empty".into()));
    }
    let mut warnings = Vec::new();
    let folds = prepare_folds(data, cfg, &mut warnings)?;

    let outcomes: Vec<Result<Option<f64>>> = grid
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let solver = cfg.solver.clone().with_lambda(lambda);
            let mut total = 0.0;
            for fold in &folds {
                match fit_transfer(&fold.train, &solver) {
                    Ok((model, _)) => total += holdout_error(&model, &fold.holdout)?,
                    Err(Error::Divergence { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(total / folds.len() as f64))
        })
        .collect();

    let mut errors = Vec::with_capacity(grid.len());
    for (&lambda, outcome) in grid.lambdas.iter().zip(outcomes) {
        let e = outcome?;
        if e.is_none() {
            warnings.push(format!("solver diverged at lambda {lambda}; skipped"));
        }
        errors.push(e);
    }
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, e) in grid.lambdas.iter().zip(&errors) {
        if let Some(e) = *e {
            if best.is_none_or(|(_, b)| e <= b) {
                best = Some((lambda, e));
            }
        }
    }
    let (chosen, _) = best.ok_or_else(|| Error::Divergence {
        iter: 0,
        objective: f64::NAN,
    })?;

    let preprocessor = cfg.preprocess.fit(data)?;
    let (model, trace) = fit_transfer(&preprocessor.apply_dataset(data)?, &cfg.solver.clone().with_lambda(chosen))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CvResult {
        lambdas: grid.lambdas.clone(),
        errors,
        chosen,
        model,
        preprocessor,
        trace,
        warnings,
    })
}

/// Selection with the default grid computed on the preprocessed data.
pub fn select_lambda_auto(data: &Dataset, cfg: &CvConfig) -> Result<CvResult> {
    let pre = cfg.preprocess.fit(data)?;
    let grid = ParamGrid::for_data(&pre.apply_dataset(data)?, cfg.grid_points, cfg.grid_ratio)?;
    select_lambda(data, &grid, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use std::collections::HashSet;

    fn data() -> Dataset {
        generate(&SynthConfig {
            n_sources: 3,
            n_entities: 300,
            pairs_per_source_pair: 40,
            ..SynthConfig::default()
        })
        .unwrap()
        .train
    }

    #[test]
    fn log_grid_shape() {
        let g = ParamGrid::log_spaced(10.0, 1e-4, 10).unwrap();
        assert_eq!(g.len(), 10);
        assert!((g.lambdas[0] - 1e-3).abs() < 1e-15);
        assert_eq!(g.lambdas[9], 10.0);
        assert!(ParamGrid::new(vec![1.0, 1.0]).is_err());
        assert!(ParamGrid::new(vec![]).is_err());
    }

    #[test]
    fn holdout_is_a_stratified_partition() {
        let d = data();
        let s = holdout_split(&d, 0.2, 3).unwrap();
        assert_eq!(s.train.len() + s.holdout.len(), d.len());
        let all: HashSet<usize> = s.train.iter().chain(&s.holdout).copied().collect();
        assert_eq!(all.len(), d.len());
        // Three pairs, two labels, 20 examples per stratum.
        assert_eq!(s.holdout.len(), 6 * 4);
        assert_eq!(s, holdout_split(&d, 0.2, 3).unwrap());
        assert!(holdout_split(&d, 1.0, 3).is_err());
    }

    #[test]
    fn singleton_strata_stay_in_train() {
        let d = data().subset(&[0, 1, 2]);
        let s = holdout_split(&d, 0.5, 0).unwrap();
        assert!(!s.warnings.is_empty());
        assert_eq!(s.train.len() + s.holdout.len(), 3);
        assert_eq!(s.holdout.len(), 1);
    }

    #[test]
    fn kfold_covers_each_index_once() {
        let d = data();
        let folds = kfold_splits(&d, 5, 1).unwrap();
        let mut seen = vec![0; d.len()];
        for f in &folds {
            for &i in &f.holdout {
                seen[i] += 1;
            }
            assert_eq!(f.train.len() + f.holdout.len(), d.len());
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn single_value_grid_is_returned() {
        let d = data();
        let r = select_lambda(&d, &ParamGrid::new(vec![0.5]).unwrap(), &CvConfig::default()).unwrap();
        assert_eq!(r.chosen, 0.5);
        assert_eq!(r.errors.len(), 1);
        assert!(r.to_csv().starts_with("lambda,holdout_error\n0.5,"));
    }

    #[test]
    fn chosen_value_attains_minimum() {
        let r = select_lambda_auto(&data(), &CvConfig::default()).unwrap();
        let best = r.errors.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let at = r.lambdas.iter().position(|&l| l == r.chosen).unwrap();
        assert_eq!(r.errors[at], Some(best));
        assert!(r.errors[at + 1..].iter().flatten().all(|&e| e > best));
    }
}
