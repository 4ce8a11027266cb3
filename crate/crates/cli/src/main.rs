//! `kaa`: data generation, training, ranking-distance checks and gradient
//! checks for attentive GNNs with spline scoring functions.

mod commands;
mod config;
mod error;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{bounds, gen, gradcheck, mrd, probe, train};
use error::{CliError, CliResult};

/// Sizes the worker pool; defaults to the available parallelism.
const WORKERS_ENV: &str = "KAA_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "kaa", version, about = "Kolmogorov-Arnold attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into a directory.
    Gen(gen::GenArgs),
    /// Train a model from a config file.
    Train(train::TrainArgs),
    /// Worst-case ranking distance of a scoring family.
    Mrd(mrd::MrdArgs),
    /// Closed-form ranking-distance bounds.
    Bounds(bounds::BoundsArgs),
    /// Finite-difference checks of scoring functions and KAN layers.
    Gradcheck(gradcheck::GradcheckArgs),
    /// How often the best key is the same for every query.
    Probe(probe::ProbeArgs),
}

fn init_workers() -> CliResult<()> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                return Err(CliError::Usage(format!(
                    "{WORKERS_ENV} must be a positive integer, got `{v}`"
                )))
            }
        },
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Failed(format!("cannot start worker pool: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    init_workers()?;
    match &cli.command {
        Command::Gen(a) => gen::run(a),
        Command::Train(a) => train::run(a),
        Command::Mrd(a) => mrd::run(a),
        Command::Bounds(a) => bounds::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Probe(a) => probe::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
