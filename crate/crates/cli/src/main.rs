//! `dsr`: dataset generation, training, sweeps, evaluation and attractor
//! analysis from the command line.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "DSR_OUT";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<dsr_core::DsrError> for CliError {
    fn from(e: dsr_core::DsrError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "dsr", version, about = "Probabilistic dynamical system reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset length scale (generate) or training schedule scale.
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Parallel training replicas for sweeps.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output root used when `--out` is absent.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    pub root: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark system and write its train/test splits.
    Generate {
        /// lorenz, cell, doublewell or rnn
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every cell and seed of a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split and draw plots.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Detect and classify attractors of a checkpoint's skeleton.
    Attractors {
        #[command(flatten)]
        common: Common,
    },
    /// τ_opt curve over a finished sweep.
    Tauopt {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { name, common } => commands::generate(&name, &common),
        Command::Train { common } => commands::train(&common),
        Command::Sweep { common } => commands::sweep(&common),
        Command::Eval { common } => commands::eval(&common),
        Command::Attractors { common } => commands::attractors(&common),
        Command::Tauopt { common } => commands::tauopt(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
