//! Per-feature B-spline bases and difference penalties.
//!
//! Each feature gets a univariate B-spline basis on a clamped knot vector:
//! boundary knots sit at the observed min/max with multiplicity
//! `degree + 1`, interior knots at empirical quantiles of the training
//! column. Evaluation uses the de Boor algorithm restricted to the active
//! span, so a row costs `O(degree^2)` regardless of basis size. Smoothness
//! is enforced by quadratic penalties built from forward-difference
//! operators on adjacent coefficients.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("degenerate feature {feature}: needs at least two distinct finite values")]
    DegenerateFeature { feature: usize },
    #[error("num_basis {num_basis} too small for degree {degree}: need at least degree + 2")]
    TooFewBasisFunctions { num_basis: usize, degree: usize },
    #[error("penalty order {order} invalid for {num_basis} basis functions: need 0 < order < num_basis")]
    BadPenaltyOrder { order: usize, num_basis: usize },
    #[error("non-finite value in feature {feature} at row {row}")]
    NonFiniteInput { feature: usize, row: usize },
    #[error("empty column for feature {feature}")]
    EmptyColumn { feature: usize },
}

/// A univariate B-spline basis tied to one feature.
///
/// `knots` is the full clamped vector of length `num_basis + degree + 1`.
/// Inputs outside `domain` are clamped to the boundary before evaluation,
/// so every basis vector sums to one even for out-of-range queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    pub feature_index: usize,
    pub knots: Vec<f64>,
    pub degree: usize,
    pub num_basis: usize,
    pub domain: (f64, f64),
}

/// Quadratic roughness penalty `D^T D` from an order-`order` forward
/// difference operator. Integer-valued, symmetric, positive semi-definite
/// with null space spanned by polynomials up to degree `order - 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub matrix: Array2<f64>,
}

/// Builds a basis for one feature column: domain from the observed range,
/// interior knots at evenly spaced empirical quantiles. If quantile ties
/// would push a knot onto the boundary (heavily discrete columns), falls
/// back to a uniform interior grid so the knot vector stays valid.
pub fn build_basis(
    column: &[f64],
    num_basis: usize,
    degree: usize,
    feature_index: usize,
) -> Result<SplineBasis, BasisError> {
    if column.is_empty() {
        return Err(BasisError::EmptyColumn {
            feature: feature_index,
        });
    }
    if let Some(row) = column.iter().position(|v| !v.is_finite()) {
        return Err(BasisError::NonFiniteInput {
            feature: feature_index,
            row,
        });
    }
    if num_basis < degree + 2 {
        return Err(BasisError::TooFewBasisFunctions { num_basis, degree });
    }
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Negated so an all-NaN column (lo = inf, hi = -inf) also lands here.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(hi > lo) {
        return Err(BasisError::DegenerateFeature {
            feature: feature_index,
        });
    }

    let n_interior = num_basis - degree - 1;
    let mut sorted = column.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut interior: Vec<f64> = (1..=n_interior)
        .map(|i| quantile(&sorted, i as f64 / (n_interior + 1) as f64))
        .collect();
    let strictly_inside = interior.iter().all(|k| *k > lo && *k < hi);
    if !strictly_inside {
        interior = (1..=n_interior)
            .map(|i| lo + (hi - lo) * i as f64 / (n_interior + 1) as f64)
            .collect();
    }

    let mut knots = Vec::with_capacity(num_basis + degree + 1);
    knots.extend(std::iter::repeat_n(lo, degree + 1));
    knots.extend_from_slice(&interior);
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    debug_assert_eq!(knots.len(), num_basis + degree + 1);

    Ok(SplineBasis {
        feature_index,
        knots,
        degree,
        num_basis,
        domain: (lo, hi),
    })
}

/// Type-7 quantile (linear interpolation between order statistics) of an
/// already sorted slice.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

impl SplineBasis {
    /// Test/construction helper: basis from explicit interior knots.
    pub fn from_interior_knots(
        feature_index: usize,
        domain: (f64, f64),
        interior: &[f64],
        degree: usize,
    ) -> Self {
        let num_basis = interior.len() + degree + 1;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(std::iter::repeat_n(domain.0, degree + 1));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(domain.1, degree + 1));
        SplineBasis {
            feature_index,
            knots,
            degree,
            num_basis,
            domain,
        }
    }

    /// Evaluates all basis functions at `x` (clamped to the domain).
    pub fn eval(&self, x: f64) -> Array1<f64> {
        let mut out = Array1::zeros(self.num_basis);
        let mut scratch = EvalScratch::new(self.degree);
        self.eval_into(x, out.as_slice_mut().unwrap(), &mut scratch);
        out
    }

    /// Largest span index `j` in `[degree, num_basis - 1]` with
    /// `knots[j] <= x`. Because interior knots are strictly inside the
    /// domain, the returned span always has positive width.
    fn find_span(&self, x: f64) -> usize {
        let t = &self.knots;
        let mut lo = self.degree;
        let mut hi = self.num_basis;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < t[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// de Boor's recurrence over the active span. Zero-width spans caused by
    /// coincident knots contribute `0/0` terms which are skipped, matching
    /// the limit convention of the textbook recursion.
    fn eval_into(&self, x: f64, out: &mut [f64], scratch: &mut EvalScratch) {
        debug_assert_eq!(out.len(), self.num_basis);
        out.fill(0.0);
        let x = x.clamp(self.domain.0, self.domain.1);
        let span = self.find_span(x);
        let t = &self.knots;
        let k = self.degree;
        let vals = &mut scratch.vals;
        vals[0] = 1.0;
        for r in 1..=k {
            // Expand degree r-1 values over span-r..=span into degree r.
            let mut saved = 0.0;
            for i in 0..r {
                let left = x - t[span + 1 - r + i];
                let right = t[span + 1 + i] - x;
                let den = t[span + 1 + i] - t[span + 1 - r + i];
                let term = if den > 0.0 { vals[i] / den } else { 0.0 };
                vals[i] = saved + right * term;
                saved = left * term;
            }
            vals[r] = saved;
        }
        out[span - k..=span].copy_from_slice(&vals[..=k]);
    }
}

/// Reusable buffer for [`SplineBasis::eval_into`]; avoids per-row
/// allocations on design-matrix hot paths.
pub(crate) struct EvalScratch {
    vals: Vec<f64>,
}

impl EvalScratch {
    pub(crate) fn new(degree: usize) -> Self {
        EvalScratch {
            vals: vec![0.0; degree + 1],
        }
    }
}

/// `n x num_basis` design matrix for one feature column.
pub fn eval_design(basis: &SplineBasis, column: &[f64]) -> Result<Array2<f64>, BasisError> {
    if let Some(row) = column.iter().position(|v| !v.is_finite()) {
        return Err(BasisError::NonFiniteInput {
            feature: basis.feature_index,
            row,
        });
    }
    let n = column.len();
    let m = basis.num_basis;
    let mut design = Array2::zeros((n, m));
    let flat = design.as_slice_mut().unwrap();
    par::fill_chunked_rows(flat, m, |row0, rows| {
        let mut scratch = EvalScratch::new(basis.degree);
        for (k, row) in rows.chunks_mut(m).enumerate() {
            basis.eval_into(column[row0 + k], row, &mut scratch);
        }
    });
    Ok(design)
}

/// Order-`order` difference penalty for `num_basis` coefficients.
pub fn difference_penalty(num_basis: usize, order: usize) -> Result<PenaltyMatrix, BasisError> {
    if order == 0 || order >= num_basis {
        return Err(BasisError::BadPenaltyOrder { order, num_basis });
    }
    // Row i of D holds the alternating binomial pattern of an order-k
    // forward difference starting at column i.
    let rows = num_basis - order;
    let mut d = Array2::zeros((rows, num_basis));
    let coef = signed_binomials(order);
    for i in 0..rows {
        for (j, c) in coef.iter().enumerate() {
            d[(i, i + j)] = *c;
        }
    }
    let matrix = d.t().dot(&d);
    Ok(PenaltyMatrix { order, matrix })
}

fn signed_binomials(order: usize) -> Vec<f64> {
    let mut c = vec![1.0f64];
    for _ in 0..order {
        let mut next = vec![0.0; c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] -= v;
            next[i + 1] += v;
        }
        c = next;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Textbook Cox-de Boor recursion, written independently of the span
    /// walk above so the two can check each other.
    fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            // Right-closed on the final span so x == domain end is covered.
            let last = t.iter().rposition(|v| *v < t[t.len() - 1]).unwrap() + 1;
            let closed_right = i + 1 == last && x == t[last];
            return if (t[i] <= x && x < t[i + 1]) || closed_right {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = t[i + k] - t[i];
        if d1 > 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, k - 1, x);
        }
        let d2 = t[i + k + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + k + 1] - x) / d2 * cox_de_boor(t, i + 1, k - 1, x);
        }
        v
    }

    #[test]
    fn cubic_two_segment_values() {
        // Knots {0,0,0,0,0.5,1,1,1,1}, evaluated at 0.25. The expected
        // values are exact dyadic rationals from running the recursion by
        // hand: 1/8, 19/32, 1/4, 1/32, 0.
        let basis = SplineBasis::from_interior_knots(0, (0.0, 1.0), &[0.5], 3);
        assert_eq!(basis.num_basis, 5);
        let v = basis.eval(0.25);
        let expected = [0.125, 0.59375, 0.25, 0.03125, 0.0];
        for (got, want) in v.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        // And the independent recursion agrees everywhere on the domain.
        for step in 0..=50 {
            let x = step as f64 / 50.0;
            let fast = basis.eval(x);
            for i in 0..basis.num_basis {
                let slow = cox_de_boor(&basis.knots, i, 3, x);
                assert_abs_diff_eq!(fast[i], slow, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn quantile_knots_on_uniform_grid() {
        // Seven equally spaced points on [0,1]; with num_basis=4, degree=1
        // the two interior knots land exactly on the 1/3 and 2/3 quantiles.
        let x: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let b = build_basis(&x, 4, 1, 0).unwrap();
        assert_eq!(b.knots.len(), 4 + 1 + 1);
        assert_abs_diff_eq!(b.knots[2], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.knots[3], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn default_shape_and_boundary_multiplicity() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7919).fract()).collect();
        let b = build_basis(&x, 10, 3, 2).unwrap();
        assert_eq!(b.knots.len(), 14);
        assert_eq!(b.num_basis, 10);
        let lo = b.domain.0;
        let hi = b.domain.1;
        assert!(b.knots[..4].iter().all(|k| *k == lo));
        assert!(b.knots[10..].iter().all(|k| *k == hi));
        assert!(b.knots[4..10].iter().all(|k| *k > lo && *k < hi));
        assert!(b.knots.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = vec![2.5; 40];
        match build_basis(&x, 10, 3, 7) {
            Err(BasisError::DegenerateFeature { feature: 7 }) => {}
            other => panic!("expected degenerate feature error, got {other:?}"),
        }
    }

    #[test]
    fn too_small_basis_rejected() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert!(matches!(
            build_basis(&x, 4, 3, 0),
            Err(BasisError::TooFewBasisFunctions { .. })
        ));
        // degree + 2 is the smallest legal size.
        assert!(build_basis(&x, 5, 3, 0).is_ok());
    }

    #[test]
    fn discrete_column_falls_back_to_uniform_knots() {
        // Heavily tied column: every quantile collapses onto a boundary or a
        // tie, so interior knots must come from the uniform fallback.
        let mut x = vec![0.0; 50];
        x.extend(vec![1.0; 50]);
        let b = build_basis(&x, 6, 3, 0).unwrap();
        assert_eq!(b.num_basis, 6);
        assert!(b.knots[4..6].iter().all(|k| *k > 0.0 && *k < 1.0));
        assert_abs_diff_eq!(b.knots[4], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.knots[5], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn degree_zero_is_indicator_basis() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b = build_basis(&x, 3, 0, 0).unwrap();
        let v = b.eval(0.0);
        assert_eq!(v.iter().filter(|t| **t != 0.0).count(), 1);
        assert_eq!(v[0], 1.0);
        let v = b.eval(9.0);
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn out_of_range_clamps() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let b = build_basis(&x, 8, 3, 0).unwrap();
        let below = b.eval(-3.0);
        let at_lo = b.eval(0.0);
        let above = b.eval(10.0);
        let at_hi = b.eval(1.0);
        for i in 0..8 {
            assert_eq!(below[i].to_bits(), at_lo[i].to_bits());
            assert_eq!(above[i].to_bits(), at_hi[i].to_bits());
        }
        assert_abs_diff_eq!(at_lo.sum(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(at_hi.sum(), 1.0, epsilon = 1e-12);
        assert_eq!(at_lo[0], 1.0);
        assert_eq!(at_hi[7], 1.0);
    }

    #[test]
    fn non_finite_input_names_row() {
        let mut x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        x[13] = f64::NAN;
        match build_basis(&x, 6, 3, 1) {
            Err(BasisError::NonFiniteInput { feature: 1, row: 13 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn design_matrix_rows_match_single_eval() {
        let x: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let b = build_basis(&x, 9, 3, 0).unwrap();
        let d = eval_design(&b, &x).unwrap();
        assert_eq!(d.shape(), &[400, 9]);
        for (i, xi) in x.iter().enumerate() {
            let single = b.eval(*xi);
            for j in 0..9 {
                assert_eq!(d[(i, j)].to_bits(), single[j].to_bits());
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn first_order_penalty_3() {
        let p = difference_penalty(3, 1).unwrap();
        let want = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.matrix[(i, j)], want[i][j]);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn second_order_penalty_4() {
        let p = difference_penalty(4, 2).unwrap();
        let want = [
            [1.0, -2.0, 1.0, 0.0],
            [-2.0, 5.0, -4.0, 1.0],
            [1.0, -4.0, 5.0, -2.0],
            [0.0, 1.0, -2.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.matrix[(i, j)], want[i][j]);
            }
        }
    }

    #[test]
    fn penalty_null_space() {
        let p = difference_penalty(7, 2).unwrap();
        let ones = Array1::from_elem(7, 1.0);
        let ramp = Array1::from_iter((1..=7).map(|i| i as f64));
        assert_abs_diff_eq!(p.matrix.dot(&ones).dot(&ones), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.matrix.dot(&ramp).dot(&ramp), 0.0, epsilon = 1e-12);
        // First-order penalty only annihilates constants.
        let p1 = difference_penalty(7, 1).unwrap();
        assert_abs_diff_eq!(p1.matrix.dot(&ones).dot(&ones), 0.0, epsilon = 1e-12);
        assert!(p1.matrix.dot(&ramp).dot(&ramp) > 1.0);
    }

    #[test]
    fn penalty_rank_deficiency_matches_order() {
        for (m, k) in [(6, 1), (8, 2), (12, 2)] {
            let p = difference_penalty(m, k).unwrap();
            let dm = nalgebra::DMatrix::from_fn(m, m, |i, j| p.matrix[(i, j)]);
            let svd = dm.svd(false, false);
            let smax = svd.singular_values.max();
            let zeros = svd
                .singular_values
                .iter()
                .filter(|s| **s < 1e-10 * smax)
                .count();
            assert_eq!(zeros, k, "nullity for m={m}, order={k}");
        }
    }

    #[test]
    fn bad_penalty_order_rejected() {
        assert!(matches!(
            difference_penalty(5, 0),
            Err(BasisError::BadPenaltyOrder { .. })
        ));
        assert!(matches!(
            difference_penalty(5, 5),
            Err(BasisError::BadPenaltyOrder { .. })
        ));
    }

    proptest! {
        #[test]
        fn partition_of_unity(
            seed in 0u64..1000,
            num_basis in 5usize..14,
            degree in 1usize..4,
            n in 20usize..120,
        ) {
            prop_assume!(num_basis >= degree + 2);
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let col: Vec<f64> = (0..n).map(|_| next() * 10.0 - 5.0).collect();
            if let Ok(b) = build_basis(&col, num_basis, degree, 0) {
                for _ in 0..32 {
                    // Sample beyond the domain too; clamping keeps the sum at one.
                    let x = next() * 14.0 - 7.0;
                    let v = b.eval(x);
                    let sum: f64 = v.sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12, "sum {} at x {}", sum, x);
                    prop_assert!(v.iter().all(|t| *t >= 0.0));
                    let support = v.iter().filter(|t| **t != 0.0).count();
                    prop_assert!(support <= degree + 1);
                }
            }
        }

        #[test]
        fn penalty_is_psd(m in 3usize..12, order in 1usize..3, seed in 0u64..500) {
            prop_assume!(order < m);
            let p = difference_penalty(m, order).unwrap();
            // Symmetry is exact by construction.
            for i in 0..m {
                for j in 0..m {
                    prop_assert_eq!(p.matrix[(i, j)].to_bits(), p.matrix[(j, i)].to_bits());
                }
            }
            let mut state = seed.wrapping_add(99);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            for _ in 0..16 {
                let v = Array1::from_iter((0..m).map(|_| next() * 4.0));
                let q = p.matrix.dot(&v).dot(&v);
                prop_assert!(q >= -1e-12, "quadratic form {}", q);
            }
        }
    }
}
