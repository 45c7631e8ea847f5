//! `peergrade`: generate synthetic grading data, fit aggregation models,
//! evaluate them and run benchmark protocols.
//!
//! Exit codes: 0 on success, 1 when the data or a model rejects the request,
//! 2 on malformed flags or configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{AnalyzeArgs, EvaluateArgs, ExperimentArgs, FitArgs, GenerateArgs};

#[derive(Debug, Parser)]
#[command(name = "peergrade", version, about = "Peer-grade aggregation toolkit")]
struct Cli {
    /// JSON file whose keys mirror the subcommand's flags (without the
    /// leading dashes). Flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset with known true scores.
    ///
    /// Writes the dataset (CSV files or dataset.json), truth.csv and
    /// config.json, the full generator configuration.
    Generate(GenerateArgs),
    /// Fit one estimator and write fit.json.
    Fit(FitArgs),
    /// Compare a fit against true scores (L2 is RMSE, Kendall counts a tie
    /// against a strict order as half an inversion).
    Evaluate(EvaluateArgs),
    /// Run a replicated benchmark protocol and write report.csv and
    /// report_meta.json.
    Experiment(ExperimentArgs),
    /// Per-grader bias diagnostics and correlation analysis.
    Analyze(AnalyzeArgs),
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Domain(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

pub trait DomainContext<T> {
    fn domain(self) -> Result<T, Failure>;
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> DomainContext<T> for Result<T, E> {
    fn domain(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Domain(e.into()))
    }

    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Generate(a) => commands::generate(config::merge(a, cfg)?),
        Command::Fit(a) => commands::fit(config::merge(a, cfg)?),
        Command::Evaluate(a) => commands::evaluate(config::merge(a, cfg)?),
        Command::Experiment(a) => commands::experiment(config::merge(a, cfg)?),
        Command::Analyze(a) => commands::analyze(config::merge(a, cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Domain(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
