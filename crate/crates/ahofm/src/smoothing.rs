//! Penalty weight calibration through effective degrees of freedom.
//!
//! Rather than asking users for raw penalty weights, each smooth is given a
//! target effective degrees of freedom. A single eigendecomposition per
//! feature reduces the map from weight to degrees of freedom to a scalar
//! spectral sum, which is cheap to evaluate and to invert; the weights for
//! every interaction degree then come from the same decomposition.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

use crate::basis::PenaltyMatrix;
use crate::par;

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error("singular smoother for feature {feature}: B^T B + lambda P is not invertible")]
    SingularSmoother { feature: usize },
    #[error(
        "df target {target} infeasible for feature {feature}: attainable range is ({lo}, {hi}]"
    )]
    InfeasibleTarget {
        feature: usize,
        target: f64,
        lo: f64,
        hi: f64,
    },
    #[error("need one penalty per design matrix: {designs} designs, {penalties} penalties")]
    ShapeMismatch { designs: usize, penalties: usize },
    #[error("df targets must be positive, got {value}")]
    BadTarget { value: f64 },
}

/// Spectrum of one feature's penalty relative to its Gram matrix: the
/// eigenvalues of `R^-T P R^-1` where `R^T R = B^T B`. Sorted descending;
/// values below `1e-10 * max` are clamped to exact zero, so the number of
/// trailing zeros equals the penalty null-space dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroResult {
    pub feature_index: usize,
    pub singular_values: Vec<f64>,
    /// True when the Gram matrix needed a ridge bump before factorizing
    /// (collinear or under-sampled design).
    pub ridged: bool,
}

/// Calibrated penalty weights for the whole model: `lambdas[d-1][j]` is the
/// weight for feature `j` at interaction degree `d` (degree 1 being the
/// additive smooths). Weights are shared across factors of a degree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingPlan {
    /// Effective df targets per degree, after clipping to the basis size.
    pub df_targets: Vec<f64>,
    pub lambdas: Vec<Vec<f64>>,
}

impl SmoothingPlan {
    pub fn lambda(&self, degree: usize, feature: usize) -> f64 {
        self.lambdas[degree - 1][feature]
    }
}

static DRO_CALLS: AtomicUsize = AtomicUsize::new(0);

#[cfg(test)]
pub(crate) fn dro_call_count() -> usize {
    DRO_CALLS.load(Ordering::SeqCst)
}

/// Demmler-Reinsch style orthogonalization of one penalized design.
///
/// Factors `B^T B = R^T R` by Cholesky and eigendecomposes the symmetric
/// matrix `R^-T P R^-1`. The effective degrees of freedom of the smoother
/// at weight `lambda` is then `sum_i 1 / (1 + lambda s_i)` over the
/// returned spectrum. A rank-deficient Gram matrix gets a ridge of
/// `1e-10 * tr(B^T B) / m` and the result is flagged.
pub fn dro(design: &Array2<f64>, penalty: &PenaltyMatrix) -> Result<DroResult, SmoothingError> {
    dro_for_feature(design, penalty, 0)
}

pub fn dro_for_feature(
    design: &Array2<f64>,
    penalty: &PenaltyMatrix,
    feature_index: usize,
) -> Result<DroResult, SmoothingError> {
    DRO_CALLS.fetch_add(1, Ordering::SeqCst);
    let m = design.ncols();
    let gram = gram_matrix(design);
    let mut ridged = false;
    let chol = match nalgebra::Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            ridged = true;
            let ridge = 1e-10 * gram.trace() / m as f64;
            let bumped = &gram + nalgebra::DMatrix::identity(m, m) * ridge;
            log::warn!(
                "feature {feature_index}: rank-deficient Gram matrix, added ridge {ridge:.3e}"
            );
            nalgebra::Cholesky::new(bumped)
                .ok_or(SmoothingError::SingularSmoother {
                    feature: feature_index,
                })?
        }
    };
    // K = L^-1 P L^-T, symmetric PSD; its eigenvalues are the spectrum we
    // need. Two triangular solves avoid forming any inverse.
    let l = chol.l();
    let p_na = nalgebra::DMatrix::from_fn(m, m, |i, j| penalty.matrix[(i, j)]);
    let x = l
        .solve_lower_triangular(&p_na)
        .ok_or(SmoothingError::SingularSmoother {
            feature: feature_index,
        })?;
    let k = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(SmoothingError::SingularSmoother {
            feature: feature_index,
        })?;
    let k_sym = (&k + k.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(k_sym);
    let mut s: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = s.first().cloned().unwrap_or(0.0).max(0.0);
    for v in &mut s {
        if *v < 1e-10 * smax {
            *v = 0.0;
        }
    }
    Ok(DroResult {
        feature_index,
        singular_values: s,
        ridged,
    })
}

fn gram_matrix(design: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    let g = design.t().dot(design);
    nalgebra::DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)])
}

/// Effective degrees of freedom of the smoother at penalty weight `lambda`,
/// given the spectrum from [`dro`]: `sum_i 1 / (1 + lambda s_i)`.
pub fn dffun(singular_values: &[f64], lambda: f64) -> f64 {
    singular_values
        .iter()
        .map(|s| 1.0 / (1.0 + lambda * s))
        .sum()
}

/// Inverts [`dffun`]: finds the penalty weight whose effective df matches
/// `target`. `target == m` maps to zero (unpenalized); otherwise bisects
/// log-lambda over `[1e-12, 1e12]`. The attainable range is
/// `(null_dim, m]` where `null_dim` counts zero spectrum entries.
pub fn sv2la(singular_values: &[f64], target: f64) -> Result<f64, SmoothingError> {
    sv2la_for_feature(singular_values, target, 0)
}

pub fn sv2la_for_feature(
    singular_values: &[f64],
    target: f64,
    feature_index: usize,
) -> Result<f64, SmoothingError> {
    let m = singular_values.len() as f64;
    let null_dim = singular_values.iter().filter(|s| **s == 0.0).count() as f64;
    let infeasible = |t: f64| SmoothingError::InfeasibleTarget {
        feature: feature_index,
        target: t,
        lo: null_dim,
        hi: m,
    };
    // Negated so a NaN target is rejected rather than waved through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(target > 0.0) {
        return Err(SmoothingError::BadTarget { value: target });
    }
    if target > m + 1e-8 || target <= null_dim {
        return Err(infeasible(target));
    }
    if (target - m).abs() <= 1e-8 {
        return Ok(0.0);
    }
    let (lo, hi) = (1e-12f64, 1e12f64);
    // df is decreasing in lambda, so check the bracket endpoints first.
    if dffun(singular_values, lo) < target {
        // Already below target at the smallest representable weight; the
        // closest attainable answer is the endpoint.
        return Ok(lo);
    }
    if dffun(singular_values, hi) > target {
        return Err(infeasible(target));
    }
    let mut log_lo = lo.ln();
    let mut log_hi = hi.ln();
    let mut best = (log_lo + log_hi) / 2.0;
    for _ in 0..200 {
        best = (log_lo + log_hi) / 2.0;
        let df = dffun(singular_values, best.exp());
        if (df - target).abs() <= 1e-8 {
            break;
        }
        if df > target {
            log_lo = best;
        } else {
            log_hi = best;
        }
    }
    Ok(best.exp())
}

/// Reference implementation of effective degrees of freedom through the
/// dense influence matrix: `tr(2H - H^T H)` with
/// `H = B (B^T B + lambda P)^-1 B^T`, computed via the m-by-m
/// cross-product matrices so nothing n-by-n is ever formed.
pub fn degrees_of_freedom_exact(
    design: &Array2<f64>,
    penalty: &PenaltyMatrix,
    lambda: f64,
) -> Result<f64, SmoothingError> {
    let m = design.ncols();
    let gram = gram_matrix(design);
    let p_na = nalgebra::DMatrix::from_fn(m, m, |i, j| penalty.matrix[(i, j)]);
    let a = &gram + p_na * lambda;
    let chol = nalgebra::Cholesky::new(a).ok_or(SmoothingError::SingularSmoother { feature: 0 })?;
    // T = A^-1 G has tr(T) = tr(H) and tr(T T) = tr(H^T H).
    let t = chol.solve(&gram);
    let tr_t = t.trace();
    let mut tr_tt = 0.0;
    for i in 0..m {
        for j in 0..m {
            tr_tt += t[(i, j)] * t[(j, i)];
        }
    }
    Ok(2.0 * tr_t - tr_tt)
}

/// Calibrates all penalty weights: one spectral decomposition per feature,
/// then one scalar inversion per (degree, feature) pair. Targets above the
/// basis size are clipped with a warning since a smooth cannot have more df
/// than coefficients.
pub fn homogeneous_smoothing(
    designs: &[Array2<f64>],
    penalties: &[PenaltyMatrix],
    df_targets: &[f64],
) -> Result<SmoothingPlan, SmoothingError> {
    if designs.len() != penalties.len() {
        return Err(SmoothingError::ShapeMismatch {
            designs: designs.len(),
            penalties: penalties.len(),
        });
    }
    let p = designs.len();
    let dros: Vec<DroResult> = par::try_map_indexed(p, |j| {
        dro_for_feature(&designs[j], &penalties[j], j)
    })?;

    let mut effective = Vec::with_capacity(df_targets.len());
    for target in df_targets {
        // Negated so a NaN target is rejected rather than waved through.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(*target > 0.0) {
            return Err(SmoothingError::BadTarget { value: *target });
        }
        let mut t = *target;
        let max_df = designs.iter().map(|d| d.ncols()).min().unwrap_or(0) as f64;
        if t > max_df {
            log::warn!("df target {t} exceeds basis size; clipping to {max_df}");
            t = max_df;
        }
        effective.push(t);
    }

    let mut lambdas = Vec::with_capacity(effective.len());
    for t in &effective {
        let per_feature: Result<Vec<f64>, SmoothingError> = dros
            .iter()
            .map(|d| {
                let m = d.singular_values.len() as f64;
                sv2la_for_feature(&d.singular_values, t.min(m), d.feature_index)
            })
            .collect();
        lambdas.push(per_feature?);
    }
    Ok(SmoothingPlan {
        df_targets: effective,
        lambdas,
    })
}
