//! `proxie`: simulate confounded datasets, estimate average treatment
//! effects with proximal and naive estimators, run benchmark studies, and
//! produce proxy diagnostics reports.
//!
//! Exit codes: 0 success, 1 configuration or schema error, 2 all estimators
//! failed, 3 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("all requested estimators failed")]
    AllEstimatorsFailed,
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::AllEstimatorsFailed => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn from_core(e: proxie_core::Error) -> CliError {
        match e {
            proxie_core::Error::Io(_) | proxie_core::Error::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "proxie",
    version,
    about = "Proximal causal inference: simulation, estimation, benchmarks, diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides PROXIE_THREADS and the config).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed override for sampling / the benchmark master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from the configured simulation model.
    Simulate(CommonArgs),
    /// Run the configured estimators on one dataset.
    Estimate(CommonArgs),
    /// Run a replication study and report bias, coverage, and convergence.
    Benchmark(CommonArgs),
    /// Run proxy association checks and the dimensionality screen.
    Diagnose(CommonArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let args = match &cli.command {
        Command::Simulate(a) | Command::Estimate(a) | Command::Benchmark(a) | Command::Diagnose(a) => a,
    };
    let config = RunConfig::load(&args.config)?;
    let out_dir = commands::resolve_out_dir(args.out.clone(), &config);
    match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(&config, &out_dir, a.seed),
        Command::Estimate(a) => commands::cmd_estimate(&config, &out_dir, a.seed),
        Command::Benchmark(a) => {
            let threads = commands::resolve_threads(a.threads, &config);
            commands::cmd_benchmark(&config, &out_dir, a.seed, threads)
        }
        Command::Diagnose(a) => commands::cmd_diagnose(&config, &out_dir, a.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
