//! Batch command-line front-end: standardization, stratification,
//! simulation, fitting, model comparison, prediction and diagnostics as
//! reproducible runs. Every subcommand writes its primary outputs plus a
//! `manifest.json` into `--out`; exit code 0 on success, 1 on validation
//! errors, 2 on runtime failures.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<betapanel::Error> for CliError {
    fn from(e: betapanel::Error) -> Self {
        use betapanel::Error::*;
        match e {
            InvalidData(_) | InvalidConfig(_) | Domain(_) | DimensionMismatch(_) => {
                CliError::validation(e.to_string())
            }
            Numerical(_) | Csv(_) | Io(_) | Json(_) => CliError::runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "betapanel",
    version,
    about = "Hierarchical dynamic beta regression for bounded panel scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Standardize raw bounded scores into (0,1) responses.
    Standardize(StandardizeArgs),
    /// Dalenius-Hodges strata and seeded stratified selection.
    Stratify(StratifyArgs),
    /// Generate a synthetic panel plus its ground truth.
    Simulate(SimulateArgs),
    /// Fit a model by MCMC and persist the chains.
    Fit(FitArgs),
    /// Score fitted runs (DIC, RPS, LogS) into a comparison table.
    Compare(CompareArgs),
    /// Posterior predictive summaries per observation.
    Predict(PredictArgs),
    /// Convergence diagnostics for a fitted run.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct StandardizeArgs {
    /// Raw-score CSV: level, school_id, year, score columns (plus any
    /// passthrough covariate columns).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Score ceiling.
    #[arg(long, default_value_t = 120.0)]
    s_max: f64,
    /// Name of the raw-score column.
    #[arg(long, default_value = "score")]
    score_col: String,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct StratifyArgs {
    /// Population CSV with one row per unit.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Continuous column the Dalenius-Hodges bands are built on.
    #[arg(long)]
    value_col: String,
    /// Number of bands for the continuous variable.
    #[arg(long, default_value_t = 5)]
    strata: usize,
    /// Sampling fraction in (0, 1].
    #[arg(long)]
    fraction: f64,
    /// Seed for the stratified selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Unit identifier column.
    #[arg(long, default_value = "unit_id")]
    id_col: String,
    /// Column holding a 0/1 certainty flag (certainty units are always
    /// selected).
    #[arg(long)]
    certainty_col: Option<String>,
    /// Extra categorical columns crossed into the stratum labels,
    /// comma-separated.
    #[arg(long, value_delimiter = ',')]
    by: Vec<String>,
    /// Participation CSV (unit_id, year) for panel retention.
    #[arg(long)]
    participation: Option<PathBuf>,
    /// Years (comma-separated) a unit must participate in to be kept.
    #[arg(long, value_delimiter = ',')]
    years: Vec<i64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON (dimensions, true hyperparameters, covariate
    /// generators, variant, seed).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Panel CSV: level, school_id, year, y plus covariate columns.
    #[arg(long)]
    data: PathBuf,
    /// Model spec JSON (variant, family, covariate lists, prior).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Sampler config JSON; defaults to the reference schedule
    /// (35000 iterations, 5000 burn-in, thin 30) when omitted.
    #[arg(long)]
    sampler: Option<PathBuf>,
    /// Override the precision variant of the spec (M1..M5).
    #[arg(long)]
    model: Option<String>,
    /// Override the sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of chains.
    #[arg(long)]
    chains: Option<u32>,
    /// Warm-start from per-(level, year) maximum-likelihood fits.
    #[arg(long)]
    warm_start: bool,
    /// Suppress the heartbeat lines on stderr.
    #[arg(long)]
    quiet: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Fitted run directories (each holding manifest.json and chains).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for the comparison table.
    #[arg(long)]
    out: PathBuf,
    /// Replicates per stored draw for the RPS streams.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Fitted run directory.
    #[arg(long)]
    run: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replicates per stored draw (defaults to enough for 95% bands).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Fitted run directory.
    #[arg(long)]
    run: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match cli.command {
        Command::Standardize(args) => commands::standardize::run(args),
        Command::Stratify(args) => commands::stratify::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Compare(args) => commands::compare::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Diagnose(args) => commands::diagnose::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
