//! `etas`: temporal point-process analysis of earthquake catalogs.
//!
//! Subcommands cover the full workflow: `fit` (maximum likelihood),
//! `changepoint` (two-stage AIC comparison), `nsfit` (penalized
//! time-varying factors with empirical-Bayes smoothing), `residual`
//! (transformed-time diagnostics), and `simulate` (thinning).
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 when the
//! invocation itself is malformed.

mod cmd_changepoint;
mod cmd_fit;
mod cmd_nsfit;
mod cmd_residual;
mod cmd_simulate;
mod common;
mod config;
mod output;
mod plot;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "etas",
    version,
    about = "Stationary and time-varying temporal point-process models for earthquake catalogs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the stationary model by maximum likelihood
    Fit(cmd_fit::FitCmd),
    /// Compare a single fit against a split fit around a change point
    Changepoint(cmd_changepoint::ChangepointCmd),
    /// Fit time-varying background/productivity factors (penalized likelihood)
    Nsfit(cmd_nsfit::NsfitCmd),
    /// Transformed-time residual diagnostics
    Residual(cmd_residual::ResidualCmd),
    /// Simulate a synthetic catalog by thinning
    Simulate(cmd_simulate::SimulateCmd),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    return ExitCode::SUCCESS;
                }
                _ => 2,
            };
            eprint!("{err}");
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Fit(cmd) => cmd_fit::run(cmd),
        Command::Changepoint(cmd) => cmd_changepoint::run(cmd),
        Command::Nsfit(cmd) => cmd_nsfit::run(cmd),
        Command::Residual(cmd) => cmd_residual::run(cmd),
        Command::Simulate(cmd) => cmd_simulate::run(cmd),
    };

    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
