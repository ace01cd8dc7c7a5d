//! `ahofm` — fit, inspect, and benchmark additive models whose spline
//! interactions are factorized into linear-time latent terms.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 for bad
//! invocations or unreadable input, 2 when the numerics fail on otherwise
//! valid input. Set `RUST_LOG` (e.g. `RUST_LOG=info`) to control
//! diagnostic verbosity; warnings print by default.

mod args;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use ahofm::data::DataError;
use ahofm::model::StoreError;
use ahofm::scaling::ScalingError;
use ahofm::sim::SimError;
use ahofm::study::StudyError;
use ahofm::ModelError;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// The invocation or its inputs are wrong; exit 1.
    Usage(String),
    /// Valid inputs, but the computation broke down; exit 2.
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Numeric(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

/// Split model failures into "you asked for something impossible" (usage)
/// and "the solve itself failed" (numeric).
pub fn model_error(e: ModelError) -> CliError {
    match &e {
        ModelError::Basis(_) | ModelError::Smoothing(_) | ModelError::Train(_) => {
            CliError::Numeric(e.to_string())
        }
        _ => CliError::Usage(e.to_string()),
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::BadSpec { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Sim(inner) => inner.into(),
            StudyError::Model(inner) => model_error(inner),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ScalingError> for CliError {
    fn from(e: ScalingError) -> Self {
        match e {
            ScalingError::Sim(inner) => inner.into(),
            ScalingError::Model(inner) => model_error(inner),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Fit(a) => args::resolve_fit(a).and_then(commands::run_fit),
        Command::Predict(a) => commands::run_predict(a),
        Command::Simulate(a) => commands::run_simulate(a),
        Command::Effects(a) => commands::run_effects(a),
        Command::Benchmark(a) => commands::run_benchmark(a),
        Command::Study(a) => commands::run_study(a),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
