//! `dynevent`: simulate, estimate, counterfactual, decompose, montecarlo.
//!
//! Exit codes: 0 success, 2 configuration or data error, 3 I/O error,
//! 4 optimizer did not converge (results are still written).

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dynevent",
    version,
    about = "Dynamic panel event studies with covariate feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Panel CSV (long format).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Fit report written by `estimate`.
    #[arg(long, global = true)]
    fit: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of the command's configuration section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "DYNEVENT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate a panel and its latent draws.
    Simulate,
    /// Fit the outcome model and the feedback law.
    Estimate,
    /// Simulate counterfactual paths.
    Counterfactual,
    /// Decompose responses into direct and indirect effects.
    Decompose,
    /// Run a Monte Carlo study.
    Montecarlo,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure threads: {e}")))?;
    }
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let out = cli
        .out
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    let ctx = Context {
        config: RunConfig::load(&config_path)?,
        data: cli.data,
        fit: cli.fit,
        out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Counterfactual => commands::counterfactual(&ctx),
        Command::Decompose => commands::decompose(&ctx),
        Command::Montecarlo => commands::montecarlo(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
