//! Block coordinate descent for squared-error fits.
//!
//! Every interaction term is multilinear in each latent value, so with the
//! other blocks frozen the objective is an exact penalized least-squares
//! problem in one coefficient fiber: `eta_i = rest_i + zeta_i * B_i^T c`
//! where `zeta_i` is the symmetric polynomial of the *other* features'
//! latent values. Each block therefore gets a closed-form update, and the
//! objective can never increase. Predictor values and per-row symmetric
//! polynomials are cached and adjusted incrementally after each block;
//! caches are rebuilt from scratch at the start of every sweep to stop
//! roundoff drift from accumulating.

use super::{design_row, EpochRecord, FitSetup, Problem, TrainConfig, TrainError, TrainReport};
use crate::factor::{self, EspScratch};
use crate::par;

/// Relative objective decrease under which the sweep loop stops.
const REL_TOL: f64 = 1e-8;

struct TensorCache {
    degree: usize,
    num_factors: usize,
    /// `phi[(f * p + j) * n + i]`: latent value of feature j, factor f, row i.
    phi: Vec<f64>,
    /// `esp[(f * n + i) * (degree + 1) + t]`: e_0..e_d per factor and row.
    esp: Vec<f64>,
}

struct Caches {
    eta: Vec<f64>,
    tensors: Vec<TensorCache>,
}

impl Caches {
    fn build(problem: &Problem, params: &[f64]) -> Self {
        let n = problem.n();
        let p = problem.layout.num_features;
        let mut tensors = Vec::with_capacity(problem.layout.factor_counts.len());
        for (d_idx, &count) in problem.layout.factor_counts.iter().enumerate() {
            let d = d_idx + 2;
            let mut phi = vec![0.0; count * p * n];
            for f in 0..count {
                for j in 0..p {
                    let coef = &params[problem.layout.gamma(d_idx, f, j)];
                    let dst = &mut phi[(f * p + j) * n..(f * p + j + 1) * n];
                    par::fill_chunked(dst, |start, chunk| {
                        for (k, v) in chunk.iter_mut().enumerate() {
                            *v = factor::dot(design_row(&problem.designs[j], start + k), coef);
                        }
                    });
                }
            }
            let mut esp = vec![0.0; count * n * (d + 1)];
            for f in 0..count {
                let slab = &mut esp[f * n * (d + 1)..(f + 1) * n * (d + 1)];
                let phi = &phi;
                par::fill_chunked_rows(slab, d + 1, |row0, rows| {
                    let mut phis = vec![0.0; p];
                    let mut scratch = EspScratch::new(p, d);
                    for (k, e_row) in rows.chunks_mut(d + 1).enumerate() {
                        let i = row0 + k;
                        for (j, v) in phis.iter_mut().enumerate() {
                            *v = phi[(f * p + j) * n + i];
                        }
                        factor::esp_all_into(&phis, d, &mut scratch, e_row);
                    }
                });
            }
            tensors.push(TensorCache {
                degree: d,
                num_factors: count,
                phi,
                esp,
            });
        }

        let mut eta = vec![0.0; n];
        {
            let tensors = &tensors;
            par::fill_chunked(&mut eta, |start, chunk| {
                for (k, v) in chunk.iter_mut().enumerate() {
                    let i = start + k;
                    let mut e = params[0];
                    for j in 0..p {
                        e += factor::dot(
                            design_row(&problem.designs[j], i),
                            &params[problem.layout.beta(j)],
                        );
                    }
                    for t in tensors {
                        let width = t.degree + 1;
                        for f in 0..t.num_factors {
                            e += t.esp[(f * n + i) * width + t.degree];
                        }
                    }
                    *v = e;
                }
            });
        }
        Caches { eta, tensors }
    }
}

fn loss_sum_cached(y: &[f64], eta: &[f64], rows: &[usize]) -> f64 {
    par::sum_chunked(rows.len(), |range| {
        let mut acc = 0.0;
        for k in range {
            let i = rows[k];
            let r = y[i] - eta[i];
            acc += r * r;
        }
        acc
    })
}

/// Solves `(h + extra ridge if needed) x = rhs`, where `h` must already
/// include the penalty term.
fn solve_block(
    h: nalgebra::DMatrix<f64>,
    rhs: &nalgebra::DVector<f64>,
    block: &str,
) -> Result<Vec<f64>, TrainError> {
    let m = h.nrows();
    if let Some(chol) = nalgebra::Cholesky::new(h.clone()) {
        return Ok(chol.solve(rhs).iter().cloned().collect());
    }
    let ridge = 1e-10 * (1.0 + h.trace() / m as f64);
    log::warn!("block {block}: singular normal equations, adding ridge {ridge:.3e}");
    let bumped = h + nalgebra::DMatrix::identity(m, m) * ridge;
    match nalgebra::Cholesky::new(bumped) {
        Some(chol) => Ok(chol.solve(rhs).iter().cloned().collect()),
        None => Err(TrainError::SingularStep {
            block: block.to_string(),
        }),
    }
}

/// Accumulates `H = sum 2 w_i^2 B_i B_i^T` and `rhs = sum 2 w_i r_i B_i`
/// over the training rows, where `row_terms(i)` yields `(w_i, r_i)`.
fn weighted_normal_eq<F>(
    design: &ndarray::Array2<f64>,
    train_rows: &[usize],
    penalty: &ndarray::Array2<f64>,
    lambda: f64,
    row_terms: F,
) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>)
where
    F: Fn(usize) -> (f64, f64) + Sync + Send,
{
    let m = design.ncols();
    let buf = par::accumulate_chunked(train_rows.len(), m * m + m, |range, buf| {
        let (h, rhs) = buf.split_at_mut(m * m);
        for k in range {
            let i = train_rows[k];
            let (w, r) = row_terms(i);
            let row = design_row(design, i);
            let w2 = 2.0 * w * w;
            let wr = 2.0 * w * r;
            for a in 0..m {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let ha = &mut h[a * m..(a + 1) * m];
                let scale = w2 * ra;
                for b in 0..m {
                    ha[b] += scale * row[b];
                }
                rhs[a] += wr * ra;
            }
        }
    });
    let mut h = nalgebra::DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            h[(a, b)] = buf[a * m + b] + lambda * penalty[(a, b)];
        }
    }
    let rhs = nalgebra::DVector::from_iterator(m, buf[m * m..].iter().cloned());
    (h, rhs)
}

/// z_t = e_t with one latent value deflated out, for t = 0..=d.
#[inline]
fn deflate_into(esp_row: &[f64], phi: f64, d: usize, z: &mut [f64]) {
    z[0] = 1.0;
    for t in 1..=d {
        z[t] = esp_row[t] - phi * z[t - 1];
    }
}

pub fn fit_bcd(problem: &Problem, cfg: &TrainConfig) -> Result<(Vec<f64>, TrainReport), TrainError> {
    if problem.loss != super::LossKind::SquaredError {
        return Err(TrainError::BcdNeedsSquaredError);
    }
    let FitSetup {
        rng: _rng,
        mut train_rows,
        val_rows,
        mut params,
    } = super::fit_setup(problem, cfg)?;
    if train_rows.is_empty() {
        return Err(TrainError::EmptyData);
    }
    // Sums over training rows run in index order; sorting only improves
    // locality, the result is deterministic either way.
    train_rows.sort_unstable();

    let n = problem.n();
    let p = problem.layout.num_features;
    let y = problem.y;

    let mut history = Vec::new();
    let mut max_block_increase = f64::NEG_INFINITY;
    let mut converged = false;
    let mut sweeps_run = 0;
    let mut prev_sweep_obj = f64::INFINITY;

    for sweep in 1..=cfg.max_epochs {
        sweeps_run = sweep;
        let mut caches = Caches::build(problem, &params);
        let mut obj = loss_sum_cached(y, &caches.eta, &train_rows)
            + 0.5 * problem.penalty_flat(&params);
        if !obj.is_finite() {
            return Err(TrainError::Diverged { epoch: sweep });
        }

        let check = |obj_prev: &mut f64,
                         params: &[f64],
                         eta: &[f64],
                         max_inc: &mut f64|
         -> Result<(), TrainError> {
            let now = loss_sum_cached(y, eta, &train_rows) + 0.5 * problem.penalty_flat(params);
            if !now.is_finite() {
                return Err(TrainError::Diverged { epoch: sweep });
            }
            *max_inc = max_inc.max(now - *obj_prev);
            // Exact solves cannot increase the objective; the slack absorbs
            // roundoff from ill-conditioned step matrices at large lambda.
            debug_assert!(
                now <= *obj_prev + 1e-8 * (1.0 + obj_prev.abs()),
                "objective rose from {obj_prev} to {now}"
            );
            *obj_prev = now;
            Ok(())
        };

        // Intercept: closed-form mean shift.
        let shift = par::sum_chunked(train_rows.len(), |range| {
            let mut acc = 0.0;
            for k in range {
                let i = train_rows[k];
                acc += y[i] - caches.eta[i];
            }
            acc
        }) / train_rows.len() as f64;
        params[0] += shift;
        par::fill_chunked(&mut caches.eta, |_, chunk| {
            for v in chunk {
                *v += shift;
            }
        });
        check(&mut obj, &params, &caches.eta, &mut max_block_increase)?;

        // Additive smooths: weight 1, partial residual y - (eta - u).
        for j in 0..p {
            let design = &problem.designs[j];
            let coef_range = problem.layout.beta(j);
            let mut u = vec![0.0; n];
            {
                let coef = &params[coef_range.clone()];
                par::fill_chunked(&mut u, |start, chunk| {
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v = factor::dot(design_row(design, start + k), coef);
                    }
                });
            }
            let lambda = problem.plan.lambda(1, j);
            let (h, rhs) = {
                let eta = &caches.eta;
                let u = &u;
                weighted_normal_eq(design, &train_rows, &problem.penalties[j].matrix, lambda, |i| {
                    (1.0, y[i] - (eta[i] - u[i]))
                })
            };
            let new_coef = solve_block(h, &rhs, &format!("beta[{j}]"))?;
            params[coef_range].copy_from_slice(&new_coef);
            let eta = &mut caches.eta;
            par::fill_chunked(eta, |start, chunk| {
                for (k, v) in chunk.iter_mut().enumerate() {
                    let i = start + k;
                    *v += factor::dot(design_row(design, i), &new_coef) - u[i];
                }
            });
            check(&mut obj, &params, &caches.eta, &mut max_block_increase)?;
        }

        // Latent fibers, factor-major within each degree.
        for (d_idx, tensor) in caches.tensors.iter_mut().enumerate() {
            let d = tensor.degree;
            let width = d + 1;
            for f in 0..tensor.num_factors {
                for j in 0..p {
                    let design = &problem.designs[j];
                    let lambda = problem.plan.lambda(d, j);
                    let coef_range = problem.layout.gamma(d_idx, f, j);
                    let (h, rhs) = {
                        let phi = &tensor.phi;
                        let esp = &tensor.esp;
                        let eta = &caches.eta;
                        weighted_normal_eq(
                            design,
                            &train_rows,
                            &problem.penalties[j].matrix,
                            lambda,
                            |i| {
                                let phi_old = phi[(f * p + j) * n + i];
                                let e_row = &esp[(f * n + i) * width..(f * n + i + 1) * width];
                                // zeta = e_{d-1} of the other features,
                                // via deflation of the cached polynomials.
                                let mut z = 1.0;
                                for e in &e_row[1..d] {
                                    z = e - phi_old * z;
                                }
                                let zeta = z;
                                let rest = eta[i] - phi_old * zeta;
                                (zeta, y[i] - rest)
                            },
                        )
                    };
                    let new_coef =
                        solve_block(h, &rhs, &format!("gamma[d={d}, f={f}, j={j}]"))?;
                    params[coef_range].copy_from_slice(&new_coef);

                    // Refresh phi, esp, and eta for every row.
                    let phi_base = (f * p + j) * n;
                    let esp_base = f * n * width;
                    let (phi_slab, esp_slab) = (&mut tensor.phi, &mut tensor.esp);
                    let eta = &mut caches.eta;
                    // Work row-by-row: each row touches disjoint cache cells.
                    let phi_col = &mut phi_slab[phi_base..phi_base + n];
                    let esp_rows = &mut esp_slab[esp_base..esp_base + n * width];
                    update_fiber_caches(
                        design, &new_coef, d, width, phi_col, esp_rows, eta,
                    );
                    check(&mut obj, &params, &caches.eta, &mut max_block_increase)?;
                }
            }
        }

        let train_loss = loss_sum_cached(y, &caches.eta, &train_rows) / train_rows.len() as f64;
        let val_loss = if val_rows.is_empty() {
            train_loss
        } else {
            loss_sum_cached(y, &caches.eta, &val_rows) / val_rows.len() as f64
        };
        history.push(EpochRecord {
            epoch: sweep,
            train_loss,
            val_loss,
            objective: obj,
        });

        if prev_sweep_obj.is_finite()
            && (prev_sweep_obj - obj).abs() <= REL_TOL * (1.0 + prev_sweep_obj.abs())
        {
            converged = true;
            break;
        }
        prev_sweep_obj = obj;
    }

    let (best_epoch, best_val_loss) = history
        .last()
        .map(|r| (r.epoch, r.val_loss))
        .unwrap_or((0, f64::NAN));
    let report = TrainReport {
        history,
        epochs_run: sweeps_run,
        best_epoch,
        best_val_loss,
        early_stopped: false,
        max_block_increase: if max_block_increase.is_finite() {
            max_block_increase
        } else {
            0.0
        },
        converged,
    };
    Ok((params, report))
}

/// After a fiber solve: recompute its latent column, fold the change into
/// the per-row symmetric polynomials via deflation, and shift eta. All
/// three caches advance together row by row.
fn update_fiber_caches(
    design: &ndarray::Array2<f64>,
    new_coef: &[f64],
    d: usize,
    width: usize,
    phi_col: &mut [f64],
    esp_rows: &mut [f64],
    eta: &mut [f64],
) {
    debug_assert_eq!(esp_rows.len(), phi_col.len() * width);
    debug_assert_eq!(eta.len(), phi_col.len());
    par::fill_chunked_zip3(
        phi_col,
        1,
        esp_rows,
        width,
        eta,
        1,
        |row0, phis, esps, etas| {
            let mut z = vec![0.0; width];
            for (k, phi_slot) in phis.iter_mut().enumerate() {
                let i = row0 + k;
                let phi_old = *phi_slot;
                let phi_new = factor::dot(design_row(design, i), new_coef);
                let e_row = &mut esps[k * width..(k + 1) * width];
                deflate_into(e_row, phi_old, d, &mut z);
                for t in 1..=d {
                    e_row[t] = z[t] + phi_new * z[t - 1];
                }
                // By multilinearity the predictor shifts by the latent
                // change times e_{d-1} of the remaining features.
                etas[k] += (phi_new - phi_old) * z[d - 1];
                *phi_slot = phi_new;
            }
        },
    );
}
