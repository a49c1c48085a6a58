//! `illiquid`: optimal trading curves, efficient frontiers, calibration and
//! verification runs from a JSON parameter file.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use illiquid_core::model::Firm;
use illiquid_core::Error;

#[derive(Parser)]
#[command(name = "illiquid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal holdings and velocities on a uniform grid.
    Curve,
    /// Terminal statistics over a log-spaced risk-aversion grid.
    Frontier,
    /// Risk aversion matching a target default probability.
    Calibrate,
    /// Monte Carlo run of the optimal curve against the analytic moments.
    Simulate,
    /// Closed form against the discrete quadratic program.
    OracleCheck,
    /// Certainty equivalent as both impact parameters shrink (one asset).
    Perturbation {
        /// Impact scale factors.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-1, 1e-2, 1e-3, 1e-4])]
        epsilons: Vec<f64>,
    },
    /// gnuplot data files for the curve, frontier and perturbation.
    Plots,
}

#[derive(Args)]
struct Options {
    /// JSON parameter file (defaults to the medium benchmark firm).
    #[arg(long, global = true, conflicts_with = "firm")]
    input: Option<PathBuf>,
    /// Benchmark firm used when no input file is given.
    #[arg(long, global = true)]
    firm: Option<Firm>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    /// Parameter override `key=value`; values are JSON.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Curve points, or risk-aversion points for the frontier.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Time steps for the simulation or the discrete oracle.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, global = true, default_value_t = 0.01)]
    target_dp: f64,
    /// Lower end of the risk-aversion range, 1/dollars.
    #[arg(long, global = true, default_value_t = 1e-9)]
    lambda_min: f64,
    /// Upper end of the risk-aversion range, 1/dollars.
    #[arg(long, global = true, default_value_t = 1e-5)]
    lambda_max: f64,
}

/// Failures that are not library errors.
#[derive(Debug)]
enum CliError {
    Input(String),
    Oracle(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Oracle(m) => write!(f, "oracle check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::NearSingular { .. }
            | Error::HorizonBeyondTstar { .. }
            | Error::InfeasibleHorizon
            | Error::DegenerateVariance { .. } => 3,
            Error::NoBracket { .. } => 4,
            Error::NotConcave { .. } => 5,
            _ => 2,
        };
    }
    match err.downcast_ref::<CliError>() {
        Some(CliError::Input(_)) => 2,
        Some(CliError::Oracle(_)) => 5,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command, &cli.opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
