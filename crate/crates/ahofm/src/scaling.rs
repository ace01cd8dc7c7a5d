//! Scaling harness: wall time and analytic memory counts for all-pairs
//! models across feature counts, demonstrating that the factorized
//! representation grows linearly in `p` where the full tensor-product
//! construction grows quadratically.

use crate::model::{fit, ModelConfig, ModelError};
use crate::sim::{simulate, SimError, SimSpec};
use crate::study::median;
use crate::trainer::{OptimizerKind, TrainConfig};
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("bad benchmark arguments: {what}")]
    BadArgs { what: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Doubles held by the factorized path: the per-feature design matrices
/// (n·p·M) plus the latent coefficient fibers (p·M·F per interaction
/// degree). Linear in p throughout.
pub fn factorized_count(n: usize, p: usize, m: usize, factor_counts: &[usize]) -> usize {
    n * p * m + factor_counts.iter().map(|f| p * m * f).sum::<usize>()
}

/// Doubles a full pairwise tensor-product construction would hold: every
/// feature pair gets an n-row design with M² columns, i.e. on the order of
/// n·p²·M². Quadratic in p.
pub fn naive_pairwise_count(n: usize, p: usize, m: usize) -> usize {
    n * p * p * m * m
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingCell {
    pub p: usize,
    pub n: usize,
    /// Seconds per repetition for the fit call alone (data generation and
    /// setup excluded).
    pub times: Vec<f64>,
    pub median_seconds: f64,
    pub factorized_doubles: usize,
    pub naive_doubles: usize,
}

#[derive(Debug, Clone)]
pub struct ScalingTable {
    pub cells: Vec<ScalingCell>,
}

impl ScalingTable {
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("p\tn\tmedian_seconds\tfactorized_doubles\tnaive_doubles\truns\n");
        for c in &self.cells {
            let runs: Vec<String> = c.times.iter().map(|t| format!("{t:.6}")).collect();
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\t{}\t{}\n",
                c.p,
                c.n,
                c.median_seconds,
                c.factorized_doubles,
                c.naive_doubles,
                runs.join(",")
            ));
        }
        out
    }

    pub fn cell(&self, p: usize, n: usize) -> Option<&ScalingCell> {
        self.cells.iter().find(|c| c.p == p && c.n == n)
    }
}

/// Times an all-pairs fit (degree 2, `factors` latent terms) for every
/// (p, n) combination, `repetitions` times each, under a fixed epoch
/// budget with early stopping disabled so every run does identical work.
pub fn benchmark_scaling(
    p_list: &[usize],
    n_list: &[usize],
    repetitions: usize,
    factors: usize,
    epochs: usize,
    seed: u64,
) -> Result<ScalingTable, ScalingError> {
    if p_list.is_empty() || n_list.is_empty() {
        return Err(ScalingError::BadArgs {
            what: "p and n lists must not be empty".into(),
        });
    }
    if repetitions == 0 || factors == 0 || epochs == 0 {
        return Err(ScalingError::BadArgs {
            what: "repetitions, factors, and epochs must be positive".into(),
        });
    }

    let mut cells = Vec::new();
    for (cell_idx, (&p, &n)) in p_list
        .iter()
        .flat_map(|p| n_list.iter().map(move |n| (p, n)))
        .enumerate()
    {
        let sim = simulate(&SimSpec::new(n, p, 1.0, seed + cell_idx as u64))?;
        let config = ModelConfig {
            degree: 2,
            factor_counts: vec![factors],
            df_targets: vec![8.0; 2],
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            max_epochs: epochs,
            patience: epochs,
            batch_size: 256,
            seed,
            ..TrainConfig::default()
        };
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            let out = fit(&sim.dataset, &config, &train)?;
            times.push(start.elapsed().as_secs_f64());
            // Consume the model so the optimizer cannot elide the work.
            assert!(out.model.main.alpha0.is_finite());
        }
        let median_seconds = median(&mut times.clone());
        cells.push(ScalingCell {
            p,
            n,
            times,
            median_seconds,
            factorized_doubles: factorized_count(n, p, config.num_basis, &config.factor_counts),
            naive_doubles: naive_pairwise_count(n, p, config.num_basis),
        });
    }
    Ok(ScalingTable { cells })
}
