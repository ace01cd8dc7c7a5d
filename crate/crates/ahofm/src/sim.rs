//! Synthetic data generation: standard-normal features, one random
//! tensor-product interaction surface per feature subset of a chosen size,
//! and Gaussian noise scaled to hit a requested signal-to-noise ratio. The
//! true surfaces are evaluated on grids and kept alongside the data so a
//! fit can later be scored against what actually generated it.

use crate::basis::{build_basis, eval_design, BasisError, SplineBasis};
use crate::data::Dataset;
use crate::factor::{tensor_product_naive, FactorError};
use crate::model::linspace;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad simulation spec: {what}")]
    BadSpec { what: String },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

fn bad(what: impl Into<String>) -> SimError {
    SimError::BadSpec { what: what.into() }
}

/// What to generate. The interaction surfaces are built from random
/// coefficients on a small per-feature spline basis (`gen_basis_dim`
/// functions, cubic), one surface per feature subset of size
/// `interaction_degree`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    /// Var(signal) / Var(noise); smaller means noisier data.
    pub snr: f64,
    pub seed: u64,
    /// Size of the interacting feature subsets (2 or 3).
    pub interaction_degree: usize,
    /// Basis dimension of the generating splines.
    pub gen_basis_dim: usize,
    /// Grid points per axis for the persisted true surfaces.
    pub grid_resolution: usize,
}

impl SimSpec {
    pub fn new(n: usize, p: usize, snr: f64, seed: u64) -> Self {
        SimSpec {
            n,
            p,
            snr,
            seed,
            interaction_degree: 2,
            gen_basis_dim: 5,
            grid_resolution: 20,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.snr.is_finite() && self.snr > 0.0) {
            return Err(bad("snr must be a positive number"));
        }
        if !(2..=3).contains(&self.interaction_degree) {
            return Err(bad("interaction degree must be 2 or 3"));
        }
        if self.p < self.interaction_degree {
            return Err(bad(format!(
                "need at least {} features for degree-{} interactions, got {}",
                self.interaction_degree, self.interaction_degree, self.p
            )));
        }
        if self.n < 20 {
            return Err(bad("need at least 20 rows"));
        }
        if self.gen_basis_dim < 5 {
            return Err(bad("generator basis dimension must be at least 5"));
        }
        if self.grid_resolution < 2 {
            return Err(bad("grid resolution must be at least 2"));
        }
        Ok(())
    }
}

/// One generating surface, evaluated over a tensor grid spanning the
/// central 90% of each feature's draws (5th to 95th percentile). Scoring
/// stays inside the data-dense region that way, instead of being dominated
/// by extrapolation into data-free corners. Values are row-major with the
/// last feature's axis varying fastest (the same layout the fitted exports
/// use).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSurface {
    pub features: Vec<usize>,
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: Vec<TruthSurface>,
    /// Noiseless signal per row (the sum of all surfaces).
    pub signal: Vec<f64>,
    pub noise_sd: f64,
}

/// All subsets of `0..p` of the given size, lexicographic.
pub fn subsets(p: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..size).collect();
    if size == 0 || size > p {
        return out;
    }
    loop {
        out.push(current.clone());
        // Advance the rightmost index that still has headroom.
        let mut k = size;
        while k > 0 {
            k -= 1;
            if current[k] < p - (size - k) {
                current[k] += 1;
                for j in k + 1..size {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
            if k == 0 {
                return out;
            }
        }
    }
}

pub fn simulate(spec: &SimSpec) -> Result<SimOutput, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p, d) = (spec.n, spec.p, spec.interaction_degree);

    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let columns: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).to_vec()).collect();
    let gen_bases: Vec<SplineBasis> = columns
        .iter()
        .enumerate()
        .map(|(j, col)| build_basis(col, spec.gen_basis_dim, 3, j))
        .collect::<Result<_, _>>()?;
    let gen_designs: Vec<Array2<f64>> = gen_bases
        .iter()
        .zip(&columns)
        .map(|(b, col)| eval_design(b, col))
        .collect::<Result<_, _>>()?;

    let grid_ranges: Vec<(f64, f64)> = columns
        .iter()
        .map(|col| {
            let mut sorted = col.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (
                crate::basis::quantile(&sorted, 0.05),
                crate::basis::quantile(&sorted, 0.95),
            )
        })
        .collect();

    let m = spec.gen_basis_dim;
    let cells_per_surface = m.pow(d as u32);
    let mut signal = vec![0.0; n];
    let mut truth = Vec::new();
    for subset in subsets(p, d) {
        let coef: Vec<f64> = (0..cells_per_surface)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for (i, s) in signal.iter_mut().enumerate() {
            let rows: Vec<&[f64]> = subset
                .iter()
                .map(|&j| gen_designs[j].row(i).to_slice().unwrap())
                .collect();
            *s += tensor_product_naive(&rows, &coef)?;
        }
        truth.push(evaluate_truth_grid(
            &subset,
            &gen_bases,
            &grid_ranges,
            &coef,
            spec.grid_resolution,
        )?);
    }

    let mean = signal.iter().sum::<f64>() / n as f64;
    let var_signal = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    let noise_sd = (var_signal / spec.snr).sqrt();
    let y: Vec<f64> = signal
        .iter()
        .map(|s| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            s + noise_sd * eps
        })
        .collect();

    let dataset = Dataset {
        feature_names: (0..p).map(|j| format!("x{j}")).collect(),
        target_name: Some("y".to_string()),
        x,
        y,
        split: None,
        log10_columns: Vec::new(),
    };
    Ok(SimOutput {
        dataset,
        truth,
        signal,
        noise_sd,
    })
}

fn evaluate_truth_grid(
    subset: &[usize],
    gen_bases: &[SplineBasis],
    grid_ranges: &[(f64, f64)],
    coef: &[f64],
    resolution: usize,
) -> Result<TruthSurface, SimError> {
    let axes: Vec<Vec<f64>> = subset
        .iter()
        .map(|&j| {
            let (lo, hi) = grid_ranges[j];
            linspace(lo, hi, resolution)
        })
        .collect();
    let basis_tables: Vec<Vec<Vec<f64>>> = subset
        .iter()
        .zip(&axes)
        .map(|(&j, axis)| {
            axis.iter()
                .map(|&g| gen_bases[j].eval(g).to_vec())
                .collect()
        })
        .collect();
    let d = subset.len();
    let cells = resolution.pow(d as u32);
    let mut values = Vec::with_capacity(cells);
    for cell in 0..cells {
        // Row-major decode, last axis fastest.
        let mut rest = cell;
        let mut idx = vec![0usize; d];
        for k in (0..d).rev() {
            idx[k] = rest % resolution;
            rest /= resolution;
        }
        let rows: Vec<&[f64]> = (0..d)
            .map(|k| basis_tables[k][idx[k]].as_slice())
            .collect();
        values.push(tensor_product_naive(&rows, coef)?);
    }
    Ok(TruthSurface {
        features: subset.to_vec(),
        axes,
        values,
    })
}
