//! `er-transfer`: file-based pipeline for multi-source entity resolution.
//!
//! Stages communicate through files in `--out-dir`:
//! `synth`/`fixture` -> `block` -> `featurize` -> `train`/`cv` -> `score`/`eval`,
//! with `experiment` running whole studies. Every run writes the resolved
//! configuration to `plan.json`.
//!
//! Exit codes: 0 success, 2 usage, 3 validation or I/O, 4 numerical failure.

mod commands;
mod stored;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use er_transfer::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "er-transfer", version, about = "Multi-source entity-resolution similarity learning")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Seed for every random choice of this invocation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for experiments and lambda grids.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Directory for all outputs.
    #[arg(long, global = true, env = "ER_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic multi-source dataset.
    Synth(SynthArgs),
    /// Write the toy movie fixture and its labeled candidate pairs.
    Fixture(FixtureArgs),
    /// Generate candidate pairs by title-token blocking.
    Block(BlockArgs),
    /// Compute feature vectors for record pairs.
    Featurize(FeaturizeArgs),
    /// Fit a model on labeled features.
    Train(TrainArgs),
    /// Choose the sparsity weight by hold-out or k-fold validation.
    Cv(CvArgs),
    /// Score feature rows with a trained model.
    Score(ScoreArgs),
    /// Precision/recall and test error of a model on labeled features.
    Eval(EvalArgs),
    /// Run an experiment family and write its report.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub sources: usize,
    #[arg(long, default_value_t = 10_000)]
    pub entities: usize,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise_min: f64,
    #[arg(long, default_value_t = 0.15)]
    pub noise_max: f64,
    #[arg(long, default_value_t = 2.0)]
    pub heterogeneity: f64,
    /// Labeled training pairs per source pair.
    #[arg(long, default_value_t = 100)]
    pub pairs_per_pair: usize,
    #[arg(long, default_value_t = 0.5)]
    pub match_fraction: f64,
    /// Also write this many test pairs, spread evenly over source pairs.
    #[arg(long, default_value_t = 0)]
    pub test_pairs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 300)]
    pub movies: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BlockArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub max_block_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub frequent_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecKind {
    /// Numeric attributes if the records carry them, movie fields otherwise.
    Auto,
    Movie,
    Numeric,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Labels CSV or candidates CSV.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = SpecKind::Auto)]
    pub spec: SpecKind,
    /// Jaccard similarity of two empty sets.
    #[arg(long, default_value_t = 1.0)]
    pub empty_jaccard: f64,
    #[arg(long, default_value = "features.csv")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Transfer,
    Pooled,
    Indep,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Declared sources, comma separated; defaults to those in the features.
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
    /// Skip feature standardization.
    #[arg(long)]
    pub no_standardize: bool,
    /// Append a constant feature after standardization.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Use this fixed step size instead of backtracking.
    #[arg(long)]
    pub fixed_step: Option<f64>,
    /// Ridge scale of the independent baseline.
    #[arg(long, default_value_t = 1e-6)]
    pub indep_ridge: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvOptions {
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Use k-fold validation instead of a single hold-out split.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub grid_points: usize,
    /// Smallest grid value as a fraction of lambda_max.
    #[arg(long, default_value_t = 1e-4)]
    pub grid_ratio: f64,
    /// Explicit grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Transfer)]
    pub method: MethodArg,
    /// Sparsity weight for the transfer model.
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,
    /// Choose the sparsity weight by validation.
    #[arg(long)]
    pub cv: bool,
    #[command(flatten)]
    pub cv_options: CvOptions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub cv_options: CvOptions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to `preprocessor.json` next to the model.
    #[arg(long)]
    pub preprocessor: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "scores.csv")]
    pub output: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub preprocessor: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    /// Restrict evaluation to one source pair, e.g. `imdb,itunes`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub eval_pair: Option<Vec<String>>,
    /// Report precision at this recall.
    #[arg(long)]
    pub at_recall: Option<f64>,
    /// Threshold for the summary counts.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    PrGrid,
    Summary,
    SampleComplexity,
    SourceComplexity,
    Runtime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Plan JSON overriding the family defaults.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    /// Examples per source pair (sample complexity, runtime).
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// Source counts (source complexity), e.g. `2,4,6,8,10` or up to 30.
    #[arg(long, value_delimiter = ',')]
    pub source_counts: Option<Vec<usize>>,
    #[arg(long)]
    pub labels_per_source: Option<usize>,
    #[arg(long)]
    pub heterogeneity: Option<f64>,
    #[arg(long)]
    pub test_pairs: Option<usize>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Validation | ErrorClass::Io => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.global.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
