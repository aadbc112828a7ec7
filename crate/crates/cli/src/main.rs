//! `entrhythm`: entropy sequences, additive models and ARIMA forecasts from
//! location histories.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::{RawConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    EmptySelection(String),
    #[error("{0}")]
    AllFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::EmptySelection(_) => 2,
            CliError::AllFailed(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "entrhythm", version, about = "Spatio-temporal entropy analysis of location histories")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    window_seconds: Option<i64>,
    #[arg(long, global = true)]
    cell_degrees: Option<f64>,
    /// Fraction of each user's windows used for training.
    #[arg(long, global = true)]
    split: Option<f64>,
    #[arg(long, global = true)]
    max_gap_days: Option<u32>,
    #[arg(long, global = true)]
    min_days: Option<f64>,
    /// Locations CSV (`user_id,lat,lon,timestamp`).
    #[arg(long, global = true)]
    locations: Option<PathBuf>,
    /// Coded profiles CSV.
    #[arg(long, global = true)]
    profiles: Option<PathBuf>,
    /// Directory holding entropy.csv and features.csv; defaults to `--out`.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    utc_offset_seconds: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    GlobalGam,
    IndividualGam,
    Arima,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate traces, report durations and gaps, keep eligible users.
    Ingest,
    /// Build the grid and write per-user entropy and feature sequences.
    Entropy,
    /// Fit models on the full sequences and write model files and summaries.
    Fit {
        #[arg(value_enum)]
        kind: FitKind,
    },
    /// Chronological train/test comparison of the three model kinds.
    Evaluate,
    /// Export smooth curves of a fitted additive model.
    Curves {
        /// Saved model file.
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated smooth names; all smooths when omitted.
        #[arg(long, value_delimiter = ',')]
        terms: Vec<String>,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Generate a synthetic cohort with coded profiles.
    Synth {
        #[arg(long, default_value_t = 12)]
        users: usize,
        #[arg(long, default_value_t = 30)]
        days: u32,
        /// Generate without the job-dependent schedule.
        #[arg(long)]
        no_job_effect: bool,
    },
}

fn resolve(shared: &Shared) -> Result<RunConfig, CliError> {
    let mut raw = match &shared.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    let path = |p: &PathBuf| p.display().to_string();
    let overrides: [(&str, Option<String>); 11] = [
        ("out", shared.out.as_ref().map(path)),
        ("seed", shared.seed.map(|v| v.to_string())),
        ("window_seconds", shared.window_seconds.map(|v| v.to_string())),
        ("cell_degrees", shared.cell_degrees.map(|v| v.to_string())),
        ("split", shared.split.map(|v| v.to_string())),
        ("max_gap_days", shared.max_gap_days.map(|v| v.to_string())),
        ("min_days", shared.min_days.map(|v| v.to_string())),
        ("locations", shared.locations.as_ref().map(path)),
        ("profiles", shared.profiles.as_ref().map(path)),
        ("data_dir", shared.data_dir.as_ref().map(path)),
        ("utc_offset_seconds", shared.utc_offset_seconds.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            raw.set(key, v)?;
        }
    }
    RunConfig::resolve(&raw)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.shared)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", cfg.out.display())))?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Entropy => commands::entropy(&cfg),
        Command::Fit { kind } => commands::fit(&cfg, kind),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Curves { model, terms, points } => commands::curves(&cfg, &model, &terms, points),
        Command::Synth {
            users,
            days,
            no_job_effect,
        } => commands::synth(&cfg, users, days, !no_job_effect),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
