//! `mscca`: simulate multi-block data, fit sparse canonical directions and
//! score them on held-out data.
//!
//! Exit codes: 0 success, 2 invalid usage or input, 3 I/O failure,
//! 4 numerical failure.

mod evaluate;
mod fit;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: mscca::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core { source, .. } if source.is_usage() => 2,
            CliError::Core { source, .. } if source.is_io() => 3,
            CliError::Core { .. } => 4,
        }
    }
}

/// Attaches a description of what was being done to a core error.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for mscca::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what(),
            source,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "mscca", version, about = "Multi-block sparse canonical correlation analysis")]
struct Cli {
    /// Worker threads for repetition-level parallelism (default: MSCCA_THREADS, then all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw simulated train/test data with known directions.
    Simulate(simulate::Args),
    /// Estimate sparse directions from training data.
    Fit(fit::Args),
    /// Score fitted directions on test data.
    Evaluate(evaluate::Args),
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let from_env = || {
        std::env::var("MSCCA_THREADS").ok().map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("MSCCA_THREADS must be a positive integer, got '{v}'")))
        })
    };
    let n = match jobs {
        Some(n) => Some(n),
        None => from_env().transpose()?,
    };
    if n == Some(0) {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))
}

/// Directory for repetition `rep` inside a simulation directory.
pub fn rep_dir_name(rep: usize) -> String {
    format!("rep_{rep:03}")
}

/// Resolves a path stored in a manifest relative to the manifest's directory.
pub fn manifest_path(manifest: &std::path::Path, rel: &str) -> PathBuf {
    manifest.parent().unwrap_or_else(|| std::path::Path::new(".")).join(rel)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let pool = thread_pool(cli.jobs)?;
    match cli.command {
        Command::Simulate(args) => simulate::run(args, &pool),
        Command::Fit(args) => fit::run(args, &pool),
        Command::Evaluate(args) => evaluate::run(args, &pool),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
