//! Minibatch Adam loop with validation-based early stopping.

use rand::seq::SliceRandom;

use super::{EpochRecord, FitSetup, Problem, TrainConfig, TrainError, TrainReport};

/// First/second moment state for the flat parameter vector. Standard
/// constants: beta1 0.9, beta2 0.999, eps 1e-8, with bias correction.
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub(crate) fn new(dim: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / b1t;
            let v_hat = self.v[k] / b2t;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub(crate) fn run(
    problem: &Problem,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, TrainReport), TrainError> {
    let FitSetup {
        mut rng,
        mut train_rows,
        val_rows,
        mut params,
    } = super::fit_setup(problem, cfg)?;
    if train_rows.is_empty() {
        return Err(TrainError::EmptyData);
    }

    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let batches_per_epoch = train_rows.len().div_ceil(cfg.batch_size);
    let penalty_scale = 1.0 / batches_per_epoch as f64;

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0usize;
    let mut early_stopped = false;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        train_rows.shuffle(&mut rng);
        for batch in train_rows.chunks(cfg.batch_size) {
            let grad = problem.full_gradient(&params, batch, penalty_scale);
            adam.step(&mut params, &grad);
        }

        let objective = problem
            .objective_value(&params, &train_rows)
            .map_err(|_| TrainError::Diverged { epoch })?;
        if !objective.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let train_loss = problem.mean_loss(&params, &train_rows)?;
        // Without a held-out slice the training loss drives early stopping.
        let val_loss = if val_rows.is_empty() {
            train_loss
        } else {
            problem.mean_loss(&params, &val_rows)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            objective,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }

    let report = TrainReport {
        history,
        epochs_run,
        best_epoch,
        best_val_loss: best_val,
        early_stopped,
        max_block_increase: 0.0,
        converged: false,
    };
    Ok((best_params, report))
}
