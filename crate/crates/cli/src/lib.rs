//! Reproducible batch experiments over fusurv-core.
//!
//! Every command writes a `config.resolved` into its output directory; feeding
//! that file back through `--config` reproduces the run byte for byte.

pub mod config;
pub mod report;
pub mod run;

mod eval;
mod stratify;
mod sweep;
mod synth;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, Preset};
pub use eval::cmd_eval;
pub use stratify::cmd_stratify;
pub use sweep::cmd_sweep_missing;
pub use synth::cmd_synth;
pub use train::cmd_train;

/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_CONFIG: &str = "config.resolved";

#[derive(Debug, Parser)]
#[command(name = "fusurv", version, about = "Missing-aware multimodal survival experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic cohort and write it in the cohort CSV layout.
    Synth(SynthArgs),
    /// Stratified k-fold training; writes checkpoints and CV reports.
    Train(TrainArgs),
    /// Re-score the test folds of a finished run from its checkpoints.
    Eval(EvalArgs),
    /// Re-evaluate frozen fold models while masking one modality in the test folds.
    SweepMissing(SweepArgs),
    /// Optimal-cutoff risk groups, Kaplan-Meier curves and log-rank tests.
    Stratify(StratifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec (`key = value`, `[modality.<name>]` sections). Defaults to the built-in cohort.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the generator spec's `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config; a previous run's config.resolved works as is.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort directory (outcome.csv plus block_<name>.csv files).
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// unimodal | early | intermediate | late | linear-cph
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated modality names.
    #[arg(long)]
    pub modalities: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base hyperparameters that the config file and flags override.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// `section.key=value` override, repeatable, e.g. `train.max_epochs=20`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Folds trained concurrently. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Cohort to score; defaults to the one the run was trained on.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub modality: String,
    /// Ascending pooled missing fractions, the first no lower than the cohort's own.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Masking seed; defaults to the run's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<run>/sweep_<modality>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    /// Pooled scores (`patient_id,fold,score`), as written by `train`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Overall-survival outcome file; the cutoff is chosen on it.
    #[arg(long)]
    pub outcome: PathBuf,
    /// Secondary endpoint as `name=path` to an outcome file, repeatable.
    #[arg(long = "endpoint", value_name = "NAME=PATH")]
    pub endpoints: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a),
        Command::SweepMissing(a) => cmd_sweep_missing(&a),
        Command::Stratify(a) => cmd_stratify(&a),
    }
}
