//! Command-line front end.
//!
//! ```text
//! krasovskii check|simulate|control|optimize|interconnect --config <path> --out <dir> [--seed <u64>]
//! ```
//!
//! Exit codes: 0 pass, 1 usage or configuration error, 2 certificate or
//! verification failure, 3 runtime or simulation fault.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;

pub const EXIT_PASS: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAIL: u8 = 2;
pub const EXIT_FAULT: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "krasovskii",
    version,
    about = "Krasovskii passivity analysis and control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sampled passivity certificate for the configured model and metric.
    Check(RunArgs),
    /// Integrate the extended system and verify the dissipation inequality.
    Simulate(RunArgs),
    /// Close the loop with the passivity-based controller and simulate.
    Control(RunArgs),
    /// Solve a quadratic program with the primal-dual flow.
    Optimize(RunArgs),
    /// Couple two certified systems and verify the joint supply inequality.
    Interconnect(RunArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit code for an error that aborted a command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Dimension { .. }
        | Error::InvalidParameter { .. }
        | Error::Definiteness { .. }
        | Error::Rank(_)
        | Error::NotApplicable(_)
        | Error::Infeasible(_)
        | Error::Regime(_)
        | Error::Sampling { .. }
        | Error::MissingChannel(_) => EXIT_USAGE,
        Error::NotCertified(_) => EXIT_FAIL,
        Error::Domain { .. }
        | Error::NonFinite { .. }
        | Error::Singular(_)
        | Error::NoConvergence { .. }
        | Error::Evaluation { .. }
        | Error::Divergence { .. }
        | Error::DomainExit { .. }
        | Error::Io(_) => EXIT_FAULT,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
        }
    };
    let (name, args) = match &cli.command {
        Command::Check(a) => ("check", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Control(a) => ("control", a),
        Command::Optimize(a) => ("optimize", a),
        Command::Interconnect(a) => ("interconnect", a),
    };
    match commands::execute(name, args) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            outcome.exit
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
