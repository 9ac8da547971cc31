//! `betta` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 usage error,
//! 3 unreadable table, 4 rank deficiency or unidentifiable model,
//! 5 numerical failure or non-convergence.

mod bundle;
mod fit;
mod simulate;
mod tables;

use std::fmt;
use std::process::ExitCode;

use betta::BettaError;
use clap::{Parser, Subcommand};

/// The variance search stopped without meeting its tolerance. Outputs are
/// still written, flagged `converged: false`.
#[derive(Debug)]
pub struct NotConverged;

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("variance-component search did not converge")
    }
}

impl std::error::Error for NotConverged {}

#[derive(Debug, Parser)]
#[command(name = "betta", version, about = "Hierarchical modelling of total species richness")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the fixed-effects model with a random observation effect.
    Fit(fit::FitArgs),
    /// Fit the model with an additional random intercept per group.
    FitRandom(fit::FitRandomArgs),
    /// Monte Carlo size or power experiment.
    Simulate(simulate::SimulateArgs),
    /// Parametric bootstrap check of an estimator's standard error.
    BootstrapSe(tables::BootstrapArgs),
    /// Estimate richness of one frequency table.
    Estimate(tables::EstimateArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<NotConverged>().is_some() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<BettaError>() {
            return match e {
                BettaError::Parse { .. } | BettaError::EmptyTable => 3,
                BettaError::RankDeficient { .. } | BettaError::Unidentifiable(_) | BettaError::Confounded(_) => 4,
                BettaError::Numerical(_) | BettaError::DegenerateWeights => 5,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Fit(a) => fit::cmd_fit(a),
        Command::FitRandom(a) => fit::cmd_fit_random(a),
        Command::Simulate(a) => simulate::cmd_simulate(a),
        Command::BootstrapSe(a) => tables::cmd_bootstrap_se(a),
        Command::Estimate(a) => tables::cmd_estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
