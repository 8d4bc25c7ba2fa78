//! Pipeline orchestration: reproducible, resumable stages over cached files.
//!
//! Exit codes: 0 success, 2 usage/path errors, 3 data-format errors,
//! 4 invariant violations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "stdpnet",
    version,
    about = "Spiking feature extraction (DoG latency coding + STDP) with a binary-activation classifier"
)]
struct Cli {
    /// Flat key=value config file consulted for flags left unset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode an IDX image/label pair into a binary spike-tensor cache.
    Encode(commands::encode::Args),
    /// Train a convolution layer with STDP over a spike cache.
    TrainConv(commands::train_conv::Args),
    /// Extract binary feature vectors (and optionally pooled spike tensors).
    Extract(commands::extract::Args),
    /// Train the classifier on cached feature vectors.
    TrainClassifier(commands::train_classifier::Args),
    /// Evaluate a model snapshot on a feature cache.
    Eval(commands::eval::Args),
    /// Render diagnostics from traces, snapshots, and caches.
    Stats(commands::stats::Args),
}

/// Stage failure with its process exit code.
pub enum CliError {
    Usage(String),
    Core(stdpnet::Error),
}

impl From<stdpnet::Error> for CliError {
    fn from(e: stdpnet::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<String> for CliError {
    fn from(msg: String) -> Self {
        CliError::Usage(msg)
    }
}

impl CliError {
    fn report(&self) -> (i32, String) {
        match self {
            CliError::Usage(msg) => (2, msg.clone()),
            CliError::Core(e) => {
                use stdpnet::Error::*;
                let code = match e {
                    Io(_) | ConfigInvalid(_) | FractionOutOfRange { .. } => 2,
                    BadMagic { .. } | TruncatedFile { .. } | DimensionMismatch(_) | Format(_)
                    | LabelOutOfRange { .. } | LengthMismatch { .. } => 3,
                    _ => 4,
                };
                (code, e.to_string())
            }
        }
    }
}

pub type CliResult = Result<(), CliError>;

/// Fail with a usage error (exit 2) when an input path is missing, naming it.
pub fn require_file(path: &std::path::Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Encode(args) => commands::encode::run(args, config),
        Command::TrainConv(args) => commands::train_conv::run(args, config),
        Command::Extract(args) => commands::extract::run(args, config),
        Command::TrainClassifier(args) => commands::train_classifier::run(args, config),
        Command::Eval(args) => commands::eval::run(args, config),
        Command::Stats(args) => commands::stats::run(args, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, msg) = e.report();
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
