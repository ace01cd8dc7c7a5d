//! Penalized objective, analytic gradients, and the two optimizers.
//!
//! Parameters live in one flat vector (`[intercept | beta blocks | gamma
//! fibers]`) addressed through [`ParamLayout`], which keeps the Adam state,
//! gradient accumulation, and finite-difference checks uniform. The
//! objective is the sum of per-row losses plus half the quadratic penalty,
//! so the penalty gradient of a block is exactly `lambda * P * coef`.

mod adam;
mod bcd;

pub use bcd::fit_bcd;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::PenaltyMatrix;
use crate::factor::{self, EspScratch, FactorTensor, MainEffects};
use crate::par;
use crate::smoothing::SmoothingPlan;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite prediction at row {row} while evaluating the objective")]
    NonFiniteEta { row: usize },
    #[error("training diverged at epoch {epoch}: objective is no longer finite")]
    Diverged { epoch: usize },
    #[error("coordinate descent requires squared-error loss")]
    BcdNeedsSquaredError,
    #[error("singular normal equations while updating {block}")]
    SingularStep { block: String },
    #[error("invalid train config: {what}")]
    BadConfig { what: String },
    #[error("training data is empty")]
    EmptyData,
}

/// Loss applied to each observation. Losses are written in terms of the
/// linear predictor `eta`; `response` maps `eta` back to the outcome scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    Logistic,
}

impl LossKind {
    pub fn value(&self, y: f64, eta: f64) -> f64 {
        match self {
            LossKind::SquaredError => {
                let r = y - eta;
                r * r
            }
            LossKind::Logistic => {
                // log(1 + exp(-z)) with z = (2y - 1) * eta, evaluated stably.
                let z = (2.0 * y - 1.0) * eta;
                let neg = -z;
                neg.max(0.0) + (-neg.abs()).exp().ln_1p()
            }
        }
    }

    /// d loss / d eta.
    pub fn deriv(&self, y: f64, eta: f64) -> f64 {
        match self {
            LossKind::SquaredError => 2.0 * (eta - y),
            LossKind::Logistic => {
                let sign = 2.0 * y - 1.0;
                -sign / (1.0 + (sign * eta).exp())
            }
        }
    }

    /// Mean-scale prediction from the linear predictor.
    pub fn response(&self, eta: f64) -> f64 {
        match self {
            LossKind::SquaredError => eta,
            LossKind::Logistic => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Intercept that matches the training mean: the mean itself for
    /// squared error, its log-odds (clamped away from 0 and 1) for
    /// logistic loss.
    pub fn mean_intercept(&self, y: &[f64]) -> f64 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        match self {
            LossKind::SquaredError => mean,
            LossKind::Logistic => {
                let m = mean.clamp(1e-6, 1.0 - 1e-6);
                (m / (1.0 - m)).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Bcd,
}

/// Optimization settings. `max_epochs` doubles as the sweep cap for
/// coordinate descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            batch_size: 128,
            learning_rate: 1e-3,
            max_epochs: 500,
            validation_fraction: 0.10,
            patience: 50,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| TrainError::BadConfig { what: what.into() };
        if self.batch_size == 0 {
            return Err(bad("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate must be positive and finite"));
        }
        if self.max_epochs == 0 {
            return Err(bad("max_epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(bad("validation_fraction must lie in [0, 1)"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(bad("init_scale must be positive and finite"));
        }
        Ok(())
    }
}

/// Addressing scheme for the flat parameter vector:
/// `[alpha0 | beta_0 .. beta_{p-1} | gamma blocks per degree, factor-major
/// then feature-major, matching FactorTensor's storage]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub num_features: usize,
    pub num_basis: usize,
    /// Factors per interaction degree, index 0 being degree 2. Empty for a
    /// purely additive model.
    pub factor_counts: Vec<usize>,
}

impl ParamLayout {
    pub fn max_degree(&self) -> usize {
        self.factor_counts.len() + 1
    }

    pub fn num_params(&self) -> usize {
        let (p, m) = (self.num_features, self.num_basis);
        let gamma: usize = self.factor_counts.iter().map(|f| f * p * m).sum();
        1 + p * m + gamma
    }

    pub fn beta(&self, feature: usize) -> std::ops::Range<usize> {
        let m = self.num_basis;
        let start = 1 + feature * m;
        start..start + m
    }

    fn tensor_base(&self, degree_idx: usize) -> usize {
        let (p, m) = (self.num_features, self.num_basis);
        let before: usize = self.factor_counts[..degree_idx]
            .iter()
            .map(|f| f * p * m)
            .sum();
        1 + p * m + before
    }

    pub fn gamma(&self, degree_idx: usize, factor: usize, feature: usize) -> std::ops::Range<usize> {
        let (p, m) = (self.num_features, self.num_basis);
        let start = self.tensor_base(degree_idx) + (factor * p + feature) * m;
        start..start + m
    }

    pub fn pack(&self, main: &MainEffects, factors: &[FactorTensor]) -> Vec<f64> {
        let mut flat = vec![0.0; self.num_params()];
        flat[0] = main.alpha0;
        for (j, beta) in main.betas.iter().enumerate() {
            flat[self.beta(j)].copy_from_slice(beta.as_slice().unwrap());
        }
        for (d_idx, tensor) in factors.iter().enumerate() {
            let base = self.tensor_base(d_idx);
            flat[base..base + tensor.as_flat().len()].copy_from_slice(tensor.as_flat());
        }
        flat
    }

    pub fn unpack(&self, flat: &[f64]) -> (MainEffects, Vec<FactorTensor>) {
        debug_assert_eq!(flat.len(), self.num_params());
        let (p, m) = (self.num_features, self.num_basis);
        let mut main = MainEffects::zeros(p, m);
        main.alpha0 = flat[0];
        for j in 0..p {
            main.betas[j]
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&flat[self.beta(j)]);
        }
        let mut factors = Vec::with_capacity(self.factor_counts.len());
        for (d_idx, &count) in self.factor_counts.iter().enumerate() {
            let mut tensor = FactorTensor::zeros(d_idx + 2, m, p, count);
            let base = self.tensor_base(d_idx);
            tensor
                .as_flat_mut()
                .copy_from_slice(&flat[base..base + count * p * m]);
            factors.push(tensor);
        }
        (main, factors)
    }
}

/// One training problem: per-feature design matrices, targets, loss, and
/// the calibrated penalties.
pub struct Problem<'a> {
    pub designs: &'a [Array2<f64>],
    pub y: &'a [f64],
    pub loss: LossKind,
    pub layout: ParamLayout,
    pub plan: &'a SmoothingPlan,
    pub penalties: &'a [PenaltyMatrix],
}

#[inline]
pub(crate) fn design_row(design: &Array2<f64>, i: usize) -> &[f64] {
    let m = design.ncols();
    &design.as_slice().unwrap()[i * m..(i + 1) * m]
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn quad_form(p_matrix: &Array2<f64>, v: &[f64]) -> f64 {
    let m = v.len();
    let flat = p_matrix.as_slice().unwrap();
    let mut total = 0.0;
    for i in 0..m {
        total += v[i] * factor::dot(&flat[i * m..(i + 1) * m], v);
    }
    total
}

/// Per-observation scratch for predictor and gradient evaluation.
pub(crate) struct RowScratch {
    phis: Vec<f64>,      // latent values for every (degree, factor) pair
    esp: Vec<f64>,       // e_0..e_dmax for the factor being processed
    dphi: Vec<f64>,      // per-feature esp gradient
    esp_scratch: EspScratch,
}

impl RowScratch {
    pub(crate) fn new(layout: &ParamLayout) -> Self {
        let p = layout.num_features;
        let dmax = layout.max_degree().max(1);
        let total_factors: usize = layout.factor_counts.iter().sum();
        RowScratch {
            phis: vec![0.0; total_factors.max(1) * p],
            esp: vec![0.0; dmax + 1],
            dphi: vec![0.0; p],
            esp_scratch: EspScratch::new(p, dmax),
        }
    }
}

impl<'a> Problem<'a> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Linear predictor for row `i`; latent values for every factor land in
    /// `scratch.phis` so a gradient pass can reuse them.
    pub(crate) fn eta_row(&self, params: &[f64], i: usize, scratch: &mut RowScratch) -> f64 {
        let p = self.layout.num_features;
        let mut eta = params[0];
        for j in 0..p {
            let row = design_row(&self.designs[j], i);
            eta += factor::dot(row, &params[self.layout.beta(j)]);
        }
        let mut block = 0;
        for (d_idx, &count) in self.layout.factor_counts.iter().enumerate() {
            let d = d_idx + 2;
            for f in 0..count {
                let phis = &mut scratch.phis[block * p..(block + 1) * p];
                for (j, phi) in phis.iter_mut().enumerate() {
                    let row = design_row(&self.designs[j], i);
                    *phi = factor::dot(row, &params[self.layout.gamma(d_idx, f, j)]);
                }
                factor::esp_all_into(phis, d, &mut scratch.esp_scratch, &mut scratch.esp);
                eta += scratch.esp[d];
                block += 1;
            }
        }
        eta
    }

    /// Loss-term gradient of row `i` accumulated into `grad`; also returns
    /// the row's loss value so metric passes can share the work.
    pub(crate) fn accumulate_row_gradient(
        &self,
        params: &[f64],
        i: usize,
        grad: &mut [f64],
        scratch: &mut RowScratch,
    ) -> f64 {
        let p = self.layout.num_features;
        let eta = self.eta_row(params, i, scratch);
        let ld = self.loss.deriv(self.y[i], eta);
        grad[0] += ld;
        for j in 0..p {
            let row = design_row(&self.designs[j], i);
            axpy(ld, row, &mut grad[self.layout.beta(j)]);
        }
        let mut block = 0;
        for (d_idx, &count) in self.layout.factor_counts.iter().enumerate() {
            let d = d_idx + 2;
            for f in 0..count {
                let phis = &scratch.phis[block * p..(block + 1) * p];
                factor::esp_all_into(phis, d, &mut scratch.esp_scratch, &mut scratch.esp);
                factor::esp_grad_into(
                    phis,
                    &scratch.esp,
                    d,
                    &mut scratch.esp_scratch,
                    &mut scratch.dphi,
                );
                for j in 0..p {
                    let row = design_row(&self.designs[j], i);
                    axpy(ld * scratch.dphi[j], row, &mut grad[self.layout.gamma(d_idx, f, j)]);
                }
                block += 1;
            }
        }
        self.loss.value(self.y[i], eta)
    }

    /// Quadratic penalty of the flat parameter vector under the calibrated
    /// weights (the factor 1/2 is applied by the objective, not here).
    pub fn penalty_flat(&self, params: &[f64]) -> f64 {
        let p = self.layout.num_features;
        let mut total = 0.0;
        for j in 0..p {
            total += self.plan.lambda(1, j) * quad_form(&self.penalties[j].matrix, &params[self.layout.beta(j)]);
        }
        for (d_idx, &count) in self.layout.factor_counts.iter().enumerate() {
            let d = d_idx + 2;
            for f in 0..count {
                for j in 0..p {
                    total += self.plan.lambda(d, j)
                        * quad_form(&self.penalties[j].matrix, &params[self.layout.gamma(d_idx, f, j)]);
                }
            }
        }
        total
    }

    /// Adds `scale * lambda * P * coef` per block to `grad`. `scale` is 1
    /// for full-batch gradients and `1 / batches_per_epoch` when
    /// minibatching, so one epoch applies the penalty exactly once.
    pub fn add_penalty_gradient(&self, params: &[f64], scale: f64, grad: &mut [f64]) {
        let p = self.layout.num_features;
        let m = self.layout.num_basis;
        let mut pv = vec![0.0; m];
        let mut apply = |range: std::ops::Range<usize>, lambda: f64, penalty: &Array2<f64>, grad: &mut [f64], params: &[f64]| {
            let coef = &params[range.clone()];
            let flat = penalty.as_slice().unwrap();
            for r in 0..m {
                pv[r] = factor::dot(&flat[r * m..(r + 1) * m], coef);
            }
            axpy(scale * lambda, &pv, &mut grad[range]);
        };
        for j in 0..p {
            apply(self.layout.beta(j), self.plan.lambda(1, j), &self.penalties[j].matrix, grad, params);
        }
        for (d_idx, &count) in self.layout.factor_counts.iter().enumerate() {
            let d = d_idx + 2;
            for f in 0..count {
                for j in 0..p {
                    apply(
                        self.layout.gamma(d_idx, f, j),
                        self.plan.lambda(d, j),
                        &self.penalties[j].matrix,
                        grad,
                        params,
                    );
                }
            }
        }
    }

    /// Sum of per-row losses over `rows`, failing on the first non-finite
    /// predictor with its row index.
    pub fn loss_sum(&self, params: &[f64], rows: &[usize]) -> Result<f64, TrainError> {
        let mut bad_row = std::sync::atomic::AtomicUsize::new(usize::MAX);
        let total = par::sum_chunked(rows.len(), |range| {
            let mut scratch = RowScratch::new(&self.layout);
            let mut acc = 0.0;
            for k in range {
                let i = rows[k];
                let eta = self.eta_row(params, i, &mut scratch);
                if !eta.is_finite() {
                    bad_row.fetch_min(i, std::sync::atomic::Ordering::SeqCst);
                    return f64::NAN;
                }
                acc += self.loss.value(self.y[i], eta);
            }
            acc
        });
        let bad = *bad_row.get_mut();
        if bad != usize::MAX {
            return Err(TrainError::NonFiniteEta { row: bad });
        }
        if !total.is_finite() {
            // Finite etas can still overflow the summed loss.
            return Err(TrainError::NonFiniteEta { row: rows[0] });
        }
        Ok(total)
    }

    pub fn mean_loss(&self, params: &[f64], rows: &[usize]) -> Result<f64, TrainError> {
        Ok(self.loss_sum(params, rows)? / rows.len().max(1) as f64)
    }

    /// Full objective over `rows`: summed loss plus half the penalty.
    pub fn objective_value(&self, params: &[f64], rows: &[usize]) -> Result<f64, TrainError> {
        Ok(self.loss_sum(params, rows)? + 0.5 * self.penalty_flat(params))
    }

    /// Loss gradient over a batch plus `penalty_scale` times the penalty
    /// gradient, as one flat vector.
    pub fn full_gradient(&self, params: &[f64], rows: &[usize], penalty_scale: f64) -> Vec<f64> {
        let width = self.layout.num_params();
        let mut grad = par::accumulate_chunked(rows.len(), width, |range, buf| {
            let mut scratch = RowScratch::new(&self.layout);
            for k in range {
                self.accumulate_row_gradient(params, rows[k], buf, &mut scratch);
            }
        });
        self.add_penalty_gradient(params, penalty_scale, &mut grad);
        grad
    }

    /// Predictor values for every row index in `rows`.
    pub fn eta_all(&self, params: &[f64], rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; rows.len()];
        par::fill_chunked(&mut out, |start, chunk| {
            let mut scratch = RowScratch::new(&self.layout);
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = self.eta_row(params, rows[start + k], &mut scratch);
            }
        });
        out
    }
}

/// Structured-argument form of the penalty, for callers holding model
/// pieces rather than a flat vector.
// `j` addresses three parallel collections at once, so an iterator over any
// single one of them would misstate what the loop ranges over.
#[allow(clippy::needless_range_loop)]
pub fn penalty_value(
    main: &MainEffects,
    factors: &[FactorTensor],
    plan: &SmoothingPlan,
    penalties: &[PenaltyMatrix],
) -> f64 {
    let mut total = 0.0;
    for (j, beta) in main.betas.iter().enumerate() {
        total += plan.lambda(1, j) * quad_form(&penalties[j].matrix, beta.as_slice().unwrap());
    }
    for tensor in factors {
        for f in 0..tensor.num_factors {
            for j in 0..tensor.num_features {
                total += plan.lambda(tensor.degree, j)
                    * quad_form(&penalties[j].matrix, tensor.fiber(j, f));
            }
        }
    }
    total
}

/// Seed-deterministic initial parameters: intercept at the loss-matched
/// training mean, additive coefficients at zero, latent fibers iid
/// `N(0, init_scale^2)` drawn in layout order.
pub fn init_params(
    layout: &ParamLayout,
    loss: LossKind,
    y_train: &[f64],
    init_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut params = vec![0.0; layout.num_params()];
    params[0] = loss.mean_intercept(y_train);
    let normal = Normal::new(0.0, init_scale).expect("positive init scale");
    let gamma_start = 1 + layout.num_features * layout.num_basis;
    for v in params[gamma_start..].iter_mut() {
        *v = normal.sample(rng);
    }
    params
}

/// Per-epoch metrics; `objective` is the penalized training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub objective: f64,
}

/// What a fit did, for reporting and for the model's metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
    /// Coordinate descent only: worst observed per-block objective change
    /// (positive numbers would mean an increase) and whether the sweep loop
    /// hit its relative-decrease tolerance.
    pub max_block_increase: f64,
    pub converged: bool,
}

impl TrainReport {
    /// History as tab-delimited text, one row per epoch with a header.
    pub fn history_table(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tobjective\n");
        for r in &self.history {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.epoch, r.train_loss, r.val_loss, r.objective
            ));
        }
        out
    }
}

/// Shared fit preamble so both optimizers see identical randomness: one
/// shuffle for the train/validation split, then the parameter draws.
pub(crate) struct FitSetup {
    pub(crate) rng: ChaCha8Rng,
    pub(crate) train_rows: Vec<usize>,
    pub(crate) val_rows: Vec<usize>,
    pub(crate) params: Vec<f64>,
}

pub(crate) fn fit_setup(problem: &Problem, cfg: &TrainConfig) -> Result<FitSetup, TrainError> {
    cfg.validate()?;
    let n = problem.n();
    if n == 0 {
        return Err(TrainError::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let val_n = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let train_rows = idx[..n - val_n].to_vec();
    let val_rows = idx[n - val_n..].to_vec();
    let y_train: Vec<f64> = train_rows.iter().map(|&i| problem.y[i]).collect();
    let params = init_params(&problem.layout, problem.loss, &y_train, cfg.init_scale, &mut rng);
    Ok(FitSetup {
        rng,
        train_rows,
        val_rows,
        params,
    })
}

/// Minibatch Adam with early stopping on held-out loss. Returns the
/// parameters from the best validation epoch (earliest on ties) and the
/// per-epoch history.
pub fn fit_sgd(problem: &Problem, cfg: &TrainConfig) -> Result<(Vec<f64>, TrainReport), TrainError> {
    adam::run(problem, cfg)
}
