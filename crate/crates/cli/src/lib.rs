//! Library side of the `halluc` command-line tool.
//!
//! Every subcommand is a plain function taking parsed arguments, so the
//! binary and the test suites share one code path.

use std::env;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use halluc_core::dataio::RunConfig;

mod dict;
mod encode;
mod eval;
pub mod metrics;
mod train;

pub use dict::{load_dictionary, load_gmm, save_dictionary, save_gmm};
pub use encode::{stream_sketch, EncodeSummary, StreamSummary};
pub use eval::{evaluate, histogram_csv, EvalReport, GRADCHECK_TOLERANCE};
pub use train::{CHECKPOINT_FILE, METRICS_FILE};

/// Exit status for a run that completed.
pub const EXIT_OK: i32 = 0;
/// Exit status for a failed self-check such as `gradcheck`.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit status for invalid input, configuration or files.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for training that produced non-finite values.
pub const EXIT_DIVERGED: i32 = 3;

/// Environment variable that replaces the `seed` key of a run configuration.
pub const SEED_ENV: &str = "HALLUC_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] halluc_core::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(halluc_core::Error::Diverged { .. }) => EXIT_DIVERGED,
            CliError::Core(_) => EXIT_VALIDATION,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "halluc", version, about = "Feature hallucination toolkit")]
pub struct Cli {
    /// Directory every other path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a k-means dictionary or a diagonal GMM to local descriptors.
    FitDict(FitDictArgs),
    /// Build sketched ground-truth targets for the configured streams.
    EncodeGt(EncodeArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Report accuracy, mean per-class accuracy and mAP of a checkpoint.
    Eval(EvalArgs),
    /// Monte Carlo check of count-sketch bias, variance and the PN factor.
    SketchStats(SketchStatsArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Histogram of squared hallucination errors as CSV.
    Hist(HistArgs),
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DictKind {
    Kmeans,
    Gmm,
}

#[derive(Debug, Args)]
pub struct FitDictArgs {
    /// Rank-2 feature file with one descriptor per row.
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DictKind::Kmeans)]
    pub kind: DictKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for targets, the updated manifest and the summary.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of per-clip local descriptors, `<clip id>.hfv`.
    #[arg(long, default_value = "descriptors")]
    pub descriptors: PathBuf,
    /// Dictionary for the bow stream.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// GMM for the fv1 and fv2 streams.
    #[arg(long)]
    pub gmm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for `checkpoint.hkt` and `metrics.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct SketchStatsArgs {
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 128)]
    pub sketch_dim: usize,
    #[arg(long, default_value_t = 20000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also measure the variance factor of Gamma PN with this exponent on
    /// non-negative vectors.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub backbone_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub streams: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 6)]
    pub clips: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Scale the analytic gradient of this block by 1.5 before comparing.
    #[arg(long)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub stream: String,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.01)]
    pub bin_width: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Ablation,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

/// Loads a run configuration and applies the seed override from
/// [`SEED_ENV`].
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Ok(seed) = env::var(SEED_ENV) {
        cfg.set("seed", &seed)?;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn worker_pool(workers: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Core(halluc_core::Error::InvalidParameter(format!("worker pool: {e}"))))
}

/// Runs one subcommand. Reports go to standard output.
pub fn run(cli: &Cli) -> CliResult<()> {
    let root = cli.root.as_path();
    match &cli.command {
        Command::FitDict(a) => dict::fit_dict(root, a),
        Command::EncodeGt(a) => encode::encode_gt(root, a),
        Command::Train(a) => train::train(root, a),
        Command::Eval(a) => {
            println!("{}", serde_json::to_string(&evaluate(root, a)?)?);
            Ok(())
        }
        Command::SketchStats(a) => eval::sketch_stats(a),
        Command::Gradcheck(a) => eval::gradcheck(a),
        Command::Hist(a) => eval::hist(root, a),
        Command::Synth(a) => train::synth(root, a),
    }
}
