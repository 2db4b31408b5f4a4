mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::commands::{BenchArgs, BoundArgs, GenArgs, OracleArgs, ReportArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("write failed: {0}")]
    Stdout(#[source] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Instance(#[from] diagcut::instances::InstanceError),
    #[error("{0}")]
    Solver(String),
    #[error("{failed} of {total} instances failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Diagonal-perturbation cutting surfaces for nonconvex quadratic programs.
#[derive(Debug, Parser)]
#[command(name = "diagcut", version)]
struct Cli {
    /// Print per-instance progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random instance.
    Gen(GenArgs),
    /// Run the diagonal cutting loop on each instance.
    Bound(BoundArgs),
    /// Run the loop with the PSD split and projected RLT cuts, reporting gap closed.
    BoundAug(BoundArgs),
    /// Time the separation solver on seeded random problems.
    SeparateBench(BenchArgs),
    /// Compute the optimum by enumeration, or a local upper bound.
    Oracle(OracleArgs),
    /// Join result files with the bundled BoxQP reference table.
    Report(ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let verbose = cli.verbose > 0;
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Bound(a) => commands::bound(&a, false, verbose),
        Command::BoundAug(a) => commands::bound(&a, true, verbose),
        Command::SeparateBench(a) => commands::separate_bench(&a, verbose),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
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
