//! Argument definitions and the flag/config-file merge.
//!
//! Every tunable on `fit` can come from three places, in order of
//! precedence: a command-line flag, a JSON config file named with
//! `--config`, and finally the built-in default. The config file uses the
//! same structured format as a saved model, so the two can be inspected
//! with the same tooling.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ahofm::trainer::{LossKind, OptimizerKind, TrainConfig};
use ahofm::ModelConfig;

use crate::CliError;

#[derive(Parser)]
#[command(
    name = "ahofm",
    version,
    about = "Fit additive models with factorized higher-order spline interactions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit a model to a CSV dataset and save it
    Fit(FitArgs),
    /// Evaluate a saved model on new rows
    Predict(PredictArgs),
    /// Generate a synthetic dataset with stored ground-truth surfaces
    Simulate(SimulateArgs),
    /// Export fitted effect surfaces, marginals, or latent curves
    Effects(EffectsArgs),
    /// Time whole fits while the number of features grows
    Benchmark(BenchmarkArgs),
    /// Compare surface recovery across latent dimensions
    Study(StudyArgs),
}

#[derive(Args)]
pub struct FitArgs {
    /// CSV file with a header row
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the target column
    #[arg(long)]
    pub target: Option<String>,
    /// Highest interaction order to model
    #[arg(long)]
    pub degree: Option<usize>,
    /// Latent terms per order, e.g. "5" or "8,4" (one value is reused for
    /// every order)
    #[arg(long)]
    pub factors: Option<String>,
    /// Degrees-of-freedom target per order, e.g. "15" or "15,10,5"
    #[arg(long)]
    pub df: Option<String>,
    /// Spline basis functions per feature
    #[arg(long)]
    pub basis_dim: Option<usize>,
    /// Loss: "squared" or "logistic"
    #[arg(long)]
    pub loss: Option<String>,
    /// Optimizer: "sgd" or "bcd"
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Seed for initialization and data shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epoch (or sweep) budget
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step size for the stochastic optimizer
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Minibatch rows per stochastic step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Standard deviation of the random latent initialization
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Comma-separated columns to log10-transform before fitting
    #[arg(long)]
    pub log10: Option<String>,
    /// Where to write the fitted model
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file supplying any of the above; flags win on conflict
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Config-file counterpart of [`FitArgs`]. Field names are what users
/// write in the JSON file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitFileConfig {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub degree: Option<usize>,
    pub factors: Option<String>,
    pub df: Option<String>,
    pub basis_dim: Option<usize>,
    pub loss: Option<String>,
    pub optimizer: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub init_scale: Option<f64>,
    pub log10: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Saved model file
    #[arg(long)]
    pub model: PathBuf,
    /// CSV file with the model's feature columns (header row required)
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the prediction table
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Rows to draw
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Number of features
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    /// Signal-to-noise ratio of the generated target
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    /// Seed for the generator
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Order of every true interaction (2 or 3)
    #[arg(long, default_value_t = 2)]
    pub interaction_degree: usize,
    /// Output stem: writes {out}.csv and {out}.truth.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EffectsArgs {
    /// Saved model file
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated feature names selecting the effect, e.g. "x1,x3"
    #[arg(long)]
    pub features: String,
    /// Grid points per axis
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Collapse the surface onto this feature (mean plus min/max band)
    #[arg(long)]
    pub marginal: Option<String>,
    /// Where to write the table
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Feature counts to time, e.g. "3,6,9,12"
    #[arg(long, default_value = "3,6,9,12")]
    pub p_list: String,
    /// Sample sizes to time
    #[arg(long, default_value = "6000")]
    pub n_list: String,
    /// Timed repetitions per cell
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Latent terms for the pairwise block
    #[arg(long, default_value_t = 5)]
    pub factors: usize,
    /// Epochs per timed fit
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Seed for the synthetic inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the table (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct StudyArgs {
    /// Rows per replication
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Number of features
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    /// Signal-to-noise ratio of the generated data
    #[arg(long, default_value_t = 0.5)]
    pub snr: f64,
    /// Latent dimensions to compare, e.g. "1,5,15"
    #[arg(long, default_value = "1,5,15")]
    pub f_list: String,
    /// Independent simulation replications
    #[arg(long, default_value_t = 5)]
    pub replications: usize,
    /// Degrees-of-freedom target per block
    #[arg(long, default_value_t = 8.0)]
    pub df: f64,
    /// Base seed; each replication offsets it
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epoch (or sweep) budget per fit
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    /// Latent initialization scale
    #[arg(long, default_value_t = 0.3)]
    pub init_scale: f64,
    /// Optimizer for the study fits: "sgd" or "bcd"
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,
    /// Where to write the table (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything `fit` needs after flags, config file, and defaults are
/// reconciled.
pub struct FitPlan {
    pub data: PathBuf,
    pub target: String,
    pub log10: Vec<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|tok| tok.trim())
        .filter(|tok| !tok.is_empty())
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| CliError::Usage(format!("cannot parse {what} entry {tok:?}")))
        })
        .collect()
}

pub fn parse_names(text: &str) -> Vec<String> {
    text.split(',')
        .map(|tok| tok.trim())
        .filter(|tok| !tok.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_loss(text: &str) -> Result<LossKind, CliError> {
    match text.to_ascii_lowercase().as_str() {
        "squared" | "squared_error" | "gaussian" => Ok(LossKind::SquaredError),
        "logistic" | "bernoulli" => Ok(LossKind::Logistic),
        other => Err(CliError::Usage(format!(
            "unknown loss {other:?}; expected \"squared\" or \"logistic\""
        ))),
    }
}

pub fn parse_optimizer(text: &str) -> Result<OptimizerKind, CliError> {
    match text.to_ascii_lowercase().as_str() {
        "sgd" | "adam" => Ok(OptimizerKind::Sgd),
        "bcd" | "coordinate" => Ok(OptimizerKind::Bcd),
        other => Err(CliError::Usage(format!(
            "unknown optimizer {other:?}; expected \"sgd\" or \"bcd\""
        ))),
    }
}

/// Spread a one-element list over `want` slots, or demand an exact length.
fn broadcast<T: Copy>(values: Vec<T>, want: usize, what: &str) -> Result<Vec<T>, CliError> {
    if values.len() == want {
        Ok(values)
    } else if values.len() == 1 {
        Ok(vec![values[0]; want])
    } else {
        Err(CliError::Usage(format!(
            "--{what} needs 1 or {want} comma-separated values, got {}",
            values.len()
        )))
    }
}

pub fn resolve_fit(args: FitArgs) -> Result<FitPlan, CliError> {
    let file: FitFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("bad config {}: {e}", path.display()))
            })?
        }
        None => FitFileConfig::default(),
    };

    let data = args
        .data
        .or(file.data)
        .ok_or_else(|| CliError::Usage("fit needs --data".into()))?;
    let target = args
        .target
        .or(file.target)
        .ok_or_else(|| CliError::Usage("fit needs --target".into()))?;
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Usage("fit needs --out".into()))?;

    let degree = args.degree.or(file.degree).unwrap_or(2);
    if degree == 0 {
        return Err(CliError::Usage("--degree must be at least 1".into()));
    }

    let mut model = ModelConfig::with_degree(degree, 5);
    if let Some(text) = args.factors.or(file.factors) {
        let parsed: Vec<usize> = parse_list(&text, "--factors")?;
        model.factor_counts = broadcast(parsed, degree.saturating_sub(1), "factors")?;
    }
    if let Some(text) = args.df.or(file.df) {
        let parsed: Vec<f64> = parse_list(&text, "--df")?;
        model.df_targets = broadcast(parsed, degree, "df")?;
    }
    if let Some(m) = args.basis_dim.or(file.basis_dim) {
        model.num_basis = m;
    }
    if let Some(text) = args.loss.or(file.loss) {
        model.loss = parse_loss(&text)?;
    }

    let mut train = TrainConfig::default();
    if let Some(text) = args.optimizer.or(file.optimizer) {
        train.optimizer = parse_optimizer(&text)?;
    }
    if let Some(seed) = args.seed.or(file.seed) {
        train.seed = seed;
    }
    if let Some(epochs) = args.epochs.or(file.epochs) {
        train.max_epochs = epochs;
    }
    if let Some(rate) = args.learning_rate.or(file.learning_rate) {
        train.learning_rate = rate;
    }
    if let Some(batch) = args.batch_size.or(file.batch_size) {
        train.batch_size = batch;
    }
    if let Some(scale) = args.init_scale.or(file.init_scale) {
        train.init_scale = scale;
    }

    let log10 = args
        .log10
        .or(file.log10)
        .map(|text| parse_names(&text))
        .unwrap_or_default();

    Ok(FitPlan {
        data,
        target,
        log10,
        model,
        train,
        out,
    })
}
