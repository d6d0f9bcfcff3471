//! `avnet` — train, evaluate and run the artery/vein segmentation
//! network.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avnet", version, about = "Artery/vein segmentation of retinal fundus images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, a CSV log and validation metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on manifest data and write a metrics report.
    Eval(EvalArgs),
    /// Predict an overlay image (red arterioles, blue venules) for one photo.
    Predict(PredictArgs),
    /// Print the architecture report (shapes, parameters, receptive fields).
    Analyze(AnalyzeArgs),
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Cross-validation fold to hold out (manifest data only).
    #[arg(long)]
    pub fold: Option<usize>,
    /// Override the configured iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fixed run-directory name (default: config hash + timestamp).
    #[arg(long)]
    pub run_name: Option<String>,
    /// Train on N generated synthetic samples instead of manifest data.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Edge size of generated synthetic samples.
    #[arg(long)]
    pub synthetic_size: Option<usize>,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict to one fold's validation ids.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Which manifest subset to evaluate: all, test, or a fold's val split.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Where to write the metrics JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Additionally report TP/(TP+FN) recall rates.
    #[arg(long)]
    pub recall: bool,
    /// Number of folds (defaults to the embedded run config, then 5).
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(clap::Args)]
pub struct PredictArgs {
    /// Checkpoint to run.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input RGB image.
    #[arg(long)]
    pub image: PathBuf,
    /// Output overlay PNG path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Input edge size for the shape table.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Command failure, classified for the exit-code contract.
pub enum CliError {
    /// Bad invocation, config or input data: exit 2.
    Usage(String),
    /// Failure during an otherwise valid run: exit 1.
    Runtime(String),
}

impl CliError {
    fn usage(err: impl std::fmt::Display) -> Self {
        CliError::Usage(err.to_string())
    }

    fn runtime(err: impl std::fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Analyze(args) => commands::analyze::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
