//! Command-line entry point. Each subcommand resolves its settings from an
//! optional flat TOML file plus flags, then runs one pipeline stage.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::Settings;

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "shufflevit", version, about = "Encrypted spectrogram classification toolkit")]
pub struct Cli {
    /// Flat key = value settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled spectrogram dataset.
    GenDataset(GenDatasetArgs),
    /// Encrypt every image of a dataset under its own key, or undo it.
    Encrypt(EncryptArgs),
    /// Train a classifier and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and write a results table.
    Eval(EvalArgs),
    /// Confidence, patch-size or shuffle-invariance sweeps.
    Sweep(SweepArgs),
    /// Run roles of the simulated RIC control loop.
    Loop(LoopArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncryptArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where per-image keys are written, or read with --decrypt.
    #[arg(long)]
    pub keys_dir: Option<PathBuf>,
    /// Invert a previous run using its saved keys.
    #[arg(long)]
    pub decrypt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vit,
    Cnn,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Per-epoch loss curve CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Results table CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Score every image, or only the test split that `train` held out.
    #[arg(long)]
    pub subset: Option<Subset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Confidence,
    Patch,
    Shuffle,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub kind: SweepKind,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sweep CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot-ready `series,x,y` CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated ascending thresholds in [0, 1).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Comma-separated patch sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub versions: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    Ran,
    Proc,
    Xapp,
    All,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    pub role: Role,
    /// Address the processing stage listens on for IQ reports.
    #[arg(long)]
    pub iq_addr: Option<String>,
    /// Address the processing stage serves stored blobs on.
    #[arg(long)]
    pub blob_addr: Option<String>,
    /// Address the RAN emulator listens on for controls.
    #[arg(long)]
    pub control_addr: Option<String>,
    /// `CLASS:SECONDS[@GAIN_DB],...` or a file holding that text.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub interval: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds per-image keys; OS entropy when absent.
    #[arg(long)]
    pub key_seed: Option<u64>,
    /// Per-report timing CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Exit with the budget code when p95 RTT misses the budget.
    #[arg(long)]
    pub enforce_budget: bool,
    /// Extra delay injected before every prediction, in milliseconds.
    #[arg(long)]
    pub slow_ms: Option<u64>,
}

/// One machine-parsable line per failure.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error[{}]: {msg}", e.kind())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    run(std::env::args_os())
}
