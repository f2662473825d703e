//! Batch command-line front end.
//!
//! Five subcommands cover the full pipeline: `synth` writes a planted-lesion
//! dataset, `train` fits one of the four strategies and logs per-epoch
//! metrics, `gradcam` extracts per-slice saliency maps for one case,
//! `metrics` scores saliency against annotations, and `aggregate` folds many
//! per-case reports into an accuracy-vs-k curve plus a feature-detection
//! table.
//!
//! Exit codes: 0 success, 2 validation failure (bad flags or bad input files,
//! message names the file and field), 1 internal error. Every command writes
//! a run manifest (`run.json` inside directory outputs, `<out>.run.json` next
//! to file outputs); all other outputs are byte-identical across reruns with
//! the same flags and seed. The `LOCVALID_THREADS` environment variable caps
//! parallelism.

mod commands;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::metrics::MetricKind;
use crate::model::{FusionStrategy, Plane};

#[derive(Debug, Parser)]
#[command(
    name = "locvalid",
    version,
    about = "Spatial-attention MRI classifiers with saliency-localisation validation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-lesion dataset.
    Synth(SynthArgs),
    /// Train a classifier on a dataset directory.
    Train(TrainArgs),
    /// Write per-slice Grad-Cam saliency maps for one case.
    Gradcam(GradcamArgs),
    /// Score saliency maps against an annotation file.
    Metrics(MetricsArgs),
    /// Fold per-case reports into an accuracy-vs-k curve.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of cases.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Minimum slices per plane.
    #[arg(long, default_value_t = 16)]
    pub slices_min: usize,
    /// Maximum slices per plane.
    #[arg(long, default_value_t = 16)]
    pub slices_max: usize,
    /// Slice height in pixels.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Slice width in pixels.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Minimum lesion radius in pixels.
    #[arg(long, default_value_t = 6)]
    pub radius_min: usize,
    /// Maximum lesion radius in pixels.
    #[arg(long, default_value_t = 9)]
    pub radius_max: usize,
    /// Peak lesion intensity above the background.
    #[arg(long, default_value_t = 3.0)]
    pub intensity: f64,
    /// Background noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    /// Fraction of positive cases (exact count, not Bernoulli).
    #[arg(long, default_value_t = 0.5)]
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Single,
    Mpfusenet,
    Mp2,
    Mplr,
}

impl From<StrategyArg> for FusionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Single => FusionStrategy::SinglePlane,
            StrategyArg::Mpfusenet => FusionStrategy::MpFuseNet,
            StrategyArg::Mp2 => FusionStrategy::Mp2,
            StrategyArg::Mplr => FusionStrategy::Mplr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaneArg {
    Axial,
    Coronal,
    Sagittal,
    All,
}

impl PlaneArg {
    pub fn single(self) -> Option<Plane> {
        match self {
            PlaneArg::Axial => Some(Plane::Axial),
            PlaneArg::Coronal => Some(Plane::Coronal),
            PlaneArg::Sagittal => Some(Plane::Sagittal),
            PlaneArg::All => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint path; an epoch log goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Fusion strategy.
    #[arg(long, value_enum, default_value_t = StrategyArg::Single)]
    pub strategy: StrategyArg,
    /// Plane for single-plane training; fusion strategies need `all`.
    #[arg(long, value_enum, default_value_t = PlaneArg::Axial)]
    pub plane: PlaneArg,
    /// Training epochs.
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Seed for initialisation, shuffling, augmentation, and the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of cases held out for evaluation; 0 disables the holdout.
    #[arg(long, default_value_t = 0.25)]
    pub holdout: f64,
    /// Disable the per-slice affine augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    /// Checkpoint written by `train` (single-plane or mplr).
    #[arg(long)]
    pub model: PathBuf,
    /// Case directory (one case of a dataset directory).
    #[arg(long)]
    pub case: PathBuf,
    /// Output directory for per-slice `.sgrd` saliency maps.
    #[arg(long)]
    pub out: PathBuf,
    /// Plane to explain; required for mplr checkpoints, must match the
    /// model's plane for single-plane checkpoints when given.
    #[arg(long, value_enum)]
    pub plane: Option<PlaneArg>,
    /// Convolution stage to differentiate against (0-based); omit for the
    /// last spatial layer (post-attention).
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of per-slice saliency maps written by `gradcam`.
    #[arg(long)]
    pub saliency: PathBuf,
    /// Annotation file (`.ann.json`) for the same case and plane.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Report path ending in .csv or .json; both forms are written.
    #[arg(long)]
    pub out: PathBuf,
    /// Pixel-importance threshold for the saliency mask, in (0,1).
    #[arg(long, default_value_t = 0.6)]
    pub threshold: f64,
    /// Annotation category to score.
    #[arg(long, default_value = "acl_tear")]
    pub category: String,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Glob matching per-case JSON reports written by `metrics`.
    #[arg(long)]
    pub reports: String,
    /// Curve path ending in .csv or .json; both forms plus a
    /// `.features.csv` table are written.
    #[arg(long)]
    pub out: PathBuf,
    /// Smallest aggregation threshold k.
    #[arg(long, default_value_t = 0.5)]
    pub k_min: f64,
    /// Largest aggregation threshold k.
    #[arg(long, default_value_t = 0.95)]
    pub k_max: f64,
    /// Step between aggregation thresholds.
    #[arg(long, default_value_t = 0.05)]
    pub k_step: f64,
    /// Key-slice metric aggregated over k.
    #[arg(long, default_value = "pla")]
    pub metric: MetricKindArg,
    /// Localisation-accuracy cutoff for the feature-detection table.
    #[arg(long, default_value_t = 0.6)]
    pub cutoff: f64,
}

/// Thin clap wrapper around [`MetricKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricKindArg {
    La,
    Fpp,
    Pla,
    Iou,
    Dice,
    Auc,
}

impl From<MetricKindArg> for MetricKind {
    fn from(m: MetricKindArg) -> Self {
        match m {
            MetricKindArg::La => MetricKind::La,
            MetricKindArg::Fpp => MetricKind::Fpp,
            MetricKindArg::Pla => MetricKind::Pla,
            MetricKindArg::Iou => MetricKind::Iou,
            MetricKindArg::Dice => MetricKind::Dice,
            MetricKindArg::Auc => MetricKind::Auc,
        }
    }
}

/// Validation failures exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Internal(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Reproducibility record written next to every output. The timestamp is the
/// only field allowed to differ between identical reruns.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Run a parsed invocation. [`main`] maps the error to an exit code.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => commands::cmd_synth(&args),
        Command::Train(args) => commands::cmd_train(&args),
        Command::Gradcam(args) => commands::cmd_gradcam(&args),
        Command::Metrics(args) => commands::cmd_metrics(&args),
        Command::Aggregate(args) => commands::cmd_aggregate(&args),
    }
}

/// Entry point for the binary: parse, run, map errors to exit codes.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Internal(err)) => {
            eprintln!("internal error: {err}");
            1
        }
    }
}
