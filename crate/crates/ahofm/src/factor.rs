//! Latent factor terms and elementary symmetric polynomial recursions.
//!
//! A degree-`d` interaction term is built from per-feature latent values
//! `phi_j = B_j(x_j)^T gamma_j`: the term equals the elementary symmetric
//! polynomial `e_d(phi_1, ..., phi_p)`, i.e. the sum of `phi` products over
//! all feature subsets of size `d`. Newton's identity turns that
//! combinatorial sum into a short recursion over power sums, which is what
//! makes evaluation linear in the number of features. The naive
//! subset-enumeration versions stay here as test oracles.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("length mismatch: basis row has {row_len} entries, coefficient fiber has {fiber_len}")]
    LengthMismatch { row_len: usize, fiber_len: usize },
    #[error("naive oracle too large: {subset:?} with basis sizes {sizes:?} exceeds the enumeration guard")]
    NaiveOracleTooLarge { subset: Vec<usize>, sizes: Vec<usize> },
    #[error("coefficient block has {got} entries but the basis grid needs {want}")]
    CoefficientShape { got: usize, want: usize },
}

/// Intercept plus one coefficient vector per feature for the additive
/// (degree-one) part of the predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainEffects {
    pub alpha0: f64,
    pub betas: Vec<Array1<f64>>,
}

impl MainEffects {
    pub fn zeros(p: usize, m: usize) -> Self {
        MainEffects {
            alpha0: 0.0,
            betas: vec![Array1::zeros(m); p],
        }
    }
}

/// Latent coefficients for one interaction degree: `num_factors` fibers of
/// length `num_basis` per feature. Stored fiber-contiguously
/// (`[factor][feature][basis]`) because every hot loop walks one fiber at a
/// time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorTensor {
    pub degree: usize,
    pub num_basis: usize,
    pub num_features: usize,
    pub num_factors: usize,
    data: Vec<f64>,
}

impl FactorTensor {
    pub fn zeros(degree: usize, num_basis: usize, num_features: usize, num_factors: usize) -> Self {
        FactorTensor {
            degree,
            num_basis,
            num_features,
            num_factors,
            data: vec![0.0; num_basis * num_features * num_factors],
        }
    }

    pub fn fiber(&self, feature: usize, factor: usize) -> &[f64] {
        let start = (factor * self.num_features + feature) * self.num_basis;
        &self.data[start..start + self.num_basis]
    }

    pub fn fiber_mut(&mut self, feature: usize, factor: usize) -> &mut [f64] {
        let start = (factor * self.num_features + feature) * self.num_basis;
        &mut self.data[start..start + self.num_basis]
    }

    pub fn get(&self, basis: usize, feature: usize, factor: usize) -> f64 {
        self.data[(factor * self.num_features + feature) * self.num_basis + basis]
    }

    pub fn set(&mut self, basis: usize, feature: usize, factor: usize, v: f64) {
        self.data[(factor * self.num_features + feature) * self.num_basis + basis] = v;
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Latent value of one feature under one fiber: the dot product of a basis
/// row with the coefficient fiber.
pub fn latent_value(basis_row: &[f64], fiber: &[f64]) -> Result<f64, FactorError> {
    if basis_row.len() != fiber.len() {
        return Err(FactorError::LengthMismatch {
            row_len: basis_row.len(),
            fiber_len: fiber.len(),
        });
    }
    Ok(dot(basis_row, fiber))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Pairwise interaction of one factor via the square-of-sums identity:
/// `sum_{j<k} phi_j phi_k = ((sum phi)^2 - sum phi^2) / 2`.
pub fn pairwise_term(phis: &[f64]) -> f64 {
    let s1: f64 = phis.iter().sum();
    let s2: f64 = phis.iter().map(|v| v * v).sum();
    0.5 * (s1 * s1 - s2)
}

/// Enumeration oracle: sums `phi` products over every subset of size `d`.
/// Exponential in `p`; only for validating the recursion.
pub fn esp_naive(phis: &[f64], d: usize) -> f64 {
    fn rec(phis: &[f64], start: usize, remaining: usize, acc: f64) -> f64 {
        if remaining == 0 {
            return acc;
        }
        let mut total = 0.0;
        for j in start..=phis.len().saturating_sub(remaining) {
            total += rec(phis, j + 1, remaining - 1, acc * phis[j]);
        }
        total
    }
    if d == 0 {
        return 1.0;
    }
    if d > phis.len() {
        return 0.0;
    }
    rec(phis, 0, d, 1.0)
}

/// Reusable buffers for the symmetric-polynomial recursions, so per-row
/// hot loops don't allocate.
pub struct EspScratch {
    pow: Vec<f64>,
    s: Vec<f64>,
    g: Vec<f64>,
    s_grad: Vec<f64>,
}

impl EspScratch {
    pub fn new(p: usize, d: usize) -> Self {
        EspScratch {
            pow: vec![0.0; p],
            s: vec![0.0; d + 1],
            g: vec![0.0; d + 1],
            s_grad: vec![0.0; d + 1],
        }
    }

    fn ensure(&mut self, p: usize, d: usize) {
        if self.pow.len() < p {
            self.pow.resize(p, 0.0);
        }
        if self.s.len() < d + 1 {
            self.s.resize(d + 1, 0.0);
            self.g.resize(d + 1, 0.0);
            self.s_grad.resize(d + 1, 0.0);
        }
    }
}

/// All elementary symmetric polynomials `e_0..e_d` of `phis` via Newton's
/// identity: `e_t = (1/t) * sum_{u=1}^{t} (-1)^{u+1} e_{t-u} s_u` with power
/// sums `s_u = sum_j phi_j^u`. Costs `O(p d + d^2)`. Orders above the
/// number of features are exactly zero by construction.
pub fn esp_all(phis: &[f64], d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d + 1];
    let mut scratch = EspScratch::new(phis.len(), d);
    esp_all_into(phis, d, &mut scratch, &mut e);
    e
}

/// Scratch-buffer form of [`esp_all`]; fills `e[0..=d]`.
pub fn esp_all_into(phis: &[f64], d: usize, scratch: &mut EspScratch, e: &mut [f64]) {
    debug_assert!(e.len() > d);
    let p = phis.len();
    scratch.ensure(p, d);
    e[0] = 1.0;
    if d == 0 {
        return;
    }
    power_sums_into(phis, d, &mut scratch.pow, &mut scratch.s);
    let s = &scratch.s;
    for t in 1..=d {
        if t > p {
            // e_t over fewer than t variables vanishes identically; pin it
            // to zero instead of letting roundoff leak in.
            e[t] = 0.0;
            continue;
        }
        let mut acc = 0.0;
        let mut sign = 1.0;
        for u in 1..=t {
            acc += sign * e[t - u] * s[u];
            sign = -sign;
        }
        e[t] = acc / t as f64;
    }
}

/// Degree-`d` term only; see [`esp_all`] for the by-products.
pub fn esp_recursive(phis: &[f64], d: usize) -> f64 {
    esp_all(phis, d)[d]
}

/// Gradient of `e_d(phis)` with respect to each `phi_j`, which equals
/// `e_{d-1}` of the other coordinates. Evaluated for all `j` at once by a
/// companion recursion over the per-coordinate derivatives of the power
/// sums, reusing `esp = e_0..e_d` from [`esp_all`]. Costs `O(p d^2)`.
pub fn esp_grad(phis: &[f64], esp: &[f64], d: usize) -> Vec<f64> {
    let mut grad = vec![0.0; phis.len()];
    let mut scratch = EspScratch::new(phis.len(), d);
    esp_grad_into(phis, esp, d, &mut scratch, &mut grad);
    grad
}

/// Scratch-buffer form of [`esp_grad`]; fills `out[0..p]`.
// Indexed loops: `u` and `t` are the exponent/order in the recursion, not
// mere positions, so iterator forms would obscure the identity.
#[allow(clippy::needless_range_loop)]
pub fn esp_grad_into(
    phis: &[f64],
    esp: &[f64],
    d: usize,
    scratch: &mut EspScratch,
    out: &mut [f64],
) {
    let p = phis.len();
    debug_assert!(esp.len() > d);
    debug_assert!(out.len() >= p);
    if d == 0 || d > p {
        out[..p].fill(0.0);
        return;
    }
    scratch.ensure(p, d);
    power_sums_into(phis, d, &mut scratch.pow, &mut scratch.s);
    let s = &scratch.s;
    let g = &mut scratch.g;
    let s_grad = &mut scratch.s_grad;
    for (j, phi) in phis.iter().enumerate() {
        // g_t = d e_t / d phi_j, built alongside the e_t recursion using
        // d s_u / d phi_j = u phi_j^{u-1}.
        g.fill(0.0);
        let mut pow = 1.0;
        for u in 1..=d {
            s_grad[u] = u as f64 * pow;
            pow *= phi;
        }
        for t in 1..=d {
            let mut acc = 0.0;
            let mut sign = 1.0;
            for u in 1..=t {
                acc += sign * (g[t - u] * s[u] + esp[t - u] * s_grad[u]);
                sign = -sign;
            }
            g[t] = acc / t as f64;
        }
        out[j] = g[d];
    }
}

#[allow(clippy::needless_range_loop)]
fn power_sums_into(phis: &[f64], d: usize, pow: &mut [f64], s: &mut [f64]) {
    for pw in pow[..phis.len()].iter_mut() {
        *pw = 1.0;
    }
    for u in 1..=d {
        let mut acc = 0.0;
        for (pw, phi) in pow[..phis.len()].iter_mut().zip(phis) {
            *pw *= phi;
            acc += *pw;
        }
        s[u] = acc;
    }
}

/// Gradient route used as a cross-check and by coordinate descent: deflate
/// feature `j` out of the cached polynomials (`z_t = e_t - phi_j z_{t-1}`),
/// leaving `z_t = e_t` of the remaining coordinates. The derivative of
/// `e_d` in `phi_j` is then `z_{d-1}`.
pub fn esp_grad_deflation(phis: &[f64], esp: &[f64], d: usize) -> Vec<f64> {
    let p = phis.len();
    let mut grad = vec![0.0; p];
    if d == 0 || d > p {
        return grad;
    }
    for (j, phi) in phis.iter().enumerate() {
        grad[j] = deflated_esp(esp, *phi, d - 1);
    }
    grad
}

/// `e_t` of all coordinates except one, given the full polynomials and the
/// held-out latent value.
pub fn deflated_esp(esp: &[f64], phi: f64, t: usize) -> f64 {
    let mut z = 1.0;
    for e in &esp[1..=t] {
        z = e - phi * z;
    }
    z
}

/// How far `e_d` drifts from its multilinear expansion in coordinate `j`:
/// `e_d - (e_d without j) - phi_j * (e_{d-1} without j)`. Identically zero
/// in exact arithmetic.
pub fn multilinearity_residual(phis: &[f64], d: usize, j: usize) -> f64 {
    let esp = esp_all(phis, d);
    let without = esp_all_excluding(phis, d, j);
    esp[d] - without[d] - phis[j] * without[d - 1]
}

fn esp_all_excluding(phis: &[f64], d: usize, j: usize) -> Vec<f64> {
    let rest: Vec<f64> = phis
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .map(|(_, v)| *v)
        .collect();
    esp_all(&rest, d)
}

/// Counts the multiply-accumulate work done inside [`linear_predictor`];
/// used by scaling tests. The no-op implementation compiles away.
pub trait OpTally {
    fn add(&mut self, ops: usize);
}

pub struct NoTally;
impl OpTally for NoTally {
    #[inline(always)]
    fn add(&mut self, _ops: usize) {}
}

#[derive(Default)]
pub struct CountTally(pub usize);
impl OpTally for CountTally {
    #[inline(always)]
    fn add(&mut self, ops: usize) {
        self.0 += ops;
    }
}

/// Full linear predictor for one observation: intercept, additive smooths,
/// and every factorized interaction term. `basis_rows[j]` is feature `j`'s
/// basis vector at this observation.
pub fn linear_predictor(
    basis_rows: &[ArrayView1<f64>],
    main: &MainEffects,
    factors: &[FactorTensor],
) -> Result<f64, FactorError> {
    linear_predictor_tallied(basis_rows, main, factors, &mut NoTally)
}

pub fn linear_predictor_tallied<T: OpTally>(
    basis_rows: &[ArrayView1<f64>],
    main: &MainEffects,
    factors: &[FactorTensor],
    tally: &mut T,
) -> Result<f64, FactorError> {
    let p = basis_rows.len();
    let mut eta = main.alpha0;
    for (row, beta) in basis_rows.iter().zip(&main.betas) {
        let row = row.as_slice().expect("contiguous basis row");
        let beta = beta.as_slice().expect("contiguous beta");
        eta += latent_value(row, beta)?;
        tally.add(row.len());
    }
    let mut phis = vec![0.0; p];
    for tensor in factors {
        let d = tensor.degree;
        for f in 0..tensor.num_factors {
            for (j, row) in basis_rows.iter().enumerate() {
                let row = row.as_slice().expect("contiguous basis row");
                phis[j] = latent_value(row, tensor.fiber(j, f))?;
                tally.add(row.len());
            }
            eta += esp_recursive(&phis, d);
            // Power sums cost p*d multiplies, the triangular identity d^2/2.
            tally.add(p * d + d * d);
        }
    }
    Ok(eta)
}

/// Dense tensor-product oracle for one observation of a small feature
/// subset: contracts the full coefficient grid against the outer product of
/// the per-feature basis rows. Guarded to at most four features and 10^4
/// grid cells; everything bigger is the point of the factorized model.
pub fn tensor_product_naive(
    basis_rows: &[&[f64]],
    coefficients: &[f64],
) -> Result<f64, FactorError> {
    let sizes: Vec<usize> = basis_rows.iter().map(|r| r.len()).collect();
    let cells: usize = sizes.iter().product();
    if basis_rows.len() > 4 || cells > 10_000 {
        return Err(FactorError::NaiveOracleTooLarge {
            subset: (0..basis_rows.len()).collect(),
            sizes,
        });
    }
    if coefficients.len() != cells {
        return Err(FactorError::CoefficientShape {
            got: coefficients.len(),
            want: cells,
        });
    }
    // Row-major walk over the grid: last feature varies fastest.
    let mut total = 0.0;
    let mut idx = vec![0usize; basis_rows.len()];
    for coef in coefficients {
        let mut w = *coef;
        for (rows, i) in basis_rows.iter().zip(&idx) {
            w *= rows[*i];
        }
        total += w;
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_phis(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
        (0..p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
    }

    #[test]
    fn pairwise_identity_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = rng.random_range(2..9);
            let phis = random_phis(&mut rng, p);
            let direct: f64 = (0..p)
                .flat_map(|a| ((a + 1)..p).map(move |b| (a, b)))
                .map(|(a, b)| phis[a] * phis[b])
                .sum();
            let fast = pairwise_term(&phis);
            let scale = 1.0 + direct.abs();
            assert!((fast - direct).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn recursion_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let p = rng.random_range(1..9);
            let d = rng.random_range(0..5);
            let phis = random_phis(&mut rng, p);
            let naive = esp_naive(&phis, d);
            let fast = esp_recursive(&phis, d);
            assert!(
                (fast - naive).abs() <= 1e-10 * (1.0 + naive.abs()),
                "p={p} d={d}: {fast} vs {naive}"
            );
        }
    }

    #[test]
    fn order_above_dimension_is_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = rng.random_range(1..5);
            let phis = random_phis(&mut rng, p);
            for d in (p + 1)..(p + 4) {
                assert_eq!(esp_recursive(&phis, d), 0.0);
                assert_eq!(esp_naive(&phis, d), 0.0);
            }
        }
    }

    #[test]
    fn known_small_cases() {
        // e_2(1,2,3) = 2 + 3 + 6 = 11; e_3 = 6.
        let phis = [1.0, 2.0, 3.0];
        let e = esp_all(&phis, 3);
        assert_abs_diff_eq!(e[0], 1.0);
        assert_abs_diff_eq!(e[1], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[2], 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[3], 6.0, epsilon = 1e-12);
        // Degree 2 equals the pairwise identity.
        assert_abs_diff_eq!(pairwise_term(&phis), 11.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_routes_agree_with_held_out_esp() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let p = rng.random_range(2..8);
            let d = rng.random_range(1..=p.min(4));
            let phis = random_phis(&mut rng, p);
            let esp = esp_all(&phis, d);
            let g_rec = esp_grad(&phis, &esp, d);
            let g_def = esp_grad_deflation(&phis, &esp, d);
            for j in 0..p {
                let held_out: Vec<f64> = phis
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != j)
                    .map(|(_, v)| *v)
                    .collect();
                let truth = esp_naive(&held_out, d - 1);
                let tol = 1e-10 * (1.0 + truth.abs());
                assert!((g_rec[j] - truth).abs() <= tol, "recursive route j={j}");
                assert!((g_def[j] - truth).abs() <= tol, "deflation route j={j}");
            }
        }
    }

    #[test]
    fn gradient_zero_when_order_exceeds_dimension() {
        let phis = [0.3, -1.2];
        let esp = esp_all(&phis, 4);
        assert!(esp_grad(&phis, &esp, 4).iter().all(|g| *g == 0.0));
        assert!(esp_grad_deflation(&phis, &esp, 4).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn deflation_removes_one_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = rng.random_range(2..7);
            let phis = random_phis(&mut rng, p);
            let d = rng.random_range(1..=p);
            let esp = esp_all(&phis, d);
            for j in 0..p {
                let rest: Vec<f64> = phis
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != j)
                    .map(|(_, v)| *v)
                    .collect();
                for t in 0..=d.min(rest.len()) {
                    let z = deflated_esp(&esp, phis[j], t);
                    let want = esp_naive(&rest, t);
                    assert!((z - want).abs() <= 1e-10 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn multilinearity_residual_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = rng.random_range(2..7);
            let d = rng.random_range(1..=p.min(4));
            let phis = random_phis(&mut rng, p);
            let j = rng.random_range(0..p);
            let r = multilinearity_residual(&phis, d, j);
            assert!(r.abs() <= 1e-10, "residual {r} at p={p} d={d} j={j}");
        }
    }

    #[test]
    fn latent_value_checks_lengths() {
        assert!(matches!(
            latent_value(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(FactorError::LengthMismatch { .. })
        ));
        assert_eq!(latent_value(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn naive_oracle_guard() {
        let row = vec![0.1; 11];
        let rows: Vec<&[f64]> = vec![&row, &row, &row, &row];
        // 11^4 > 10^4 cells.
        let err = tensor_product_naive(&rows, &vec![0.0; 14641]).unwrap_err();
        assert!(err.to_string().contains("naive oracle too large"));
        let rows5: Vec<&[f64]> = vec![&row[..2]; 5];
        assert!(tensor_product_naive(&rows5, &vec![0.0; 32]).is_err());
    }

    #[test]
    fn naive_oracle_small_grid() {
        // 2x2 grid contracted by hand:
        // sum_ij c[i,j] a[i] b[j] with a=(1,2), b=(3,4), c=[[1,2],[3,4]]
        // = 1*1*3 + 2*1*4 + 3*2*3 + 4*2*4 = 3 + 8 + 18 + 32 = 61.
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let c = [1.0, 2.0, 3.0, 4.0];
        let got = tensor_product_naive(&[&a, &b], &c).unwrap();
        assert_abs_diff_eq!(got, 61.0, epsilon = 1e-12);
    }

    #[test]
    fn predictor_is_intercept_plus_smooths_plus_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = 3;
        let m = 4;
        let rows_data: Vec<Array1<f64>> = (0..p)
            .map(|_| Array1::from_iter((0..m).map(|_| rng.random::<f64>())))
            .collect();
        let rows: Vec<ArrayView1<f64>> = rows_data.iter().map(|r| r.view()).collect();
        let mut main = MainEffects::zeros(p, m);
        main.alpha0 = 0.7;
        for beta in &mut main.betas {
            for v in beta.iter_mut() {
                *v = rng.random::<f64>() - 0.5;
            }
        }
        let mut tensor = FactorTensor::zeros(2, m, p, 2);
        for v in tensor.as_flat_mut() {
            *v = rng.random::<f64>() - 0.5;
        }

        let got = linear_predictor(&rows, &main, &[tensor.clone()]).unwrap();

        let mut want = main.alpha0;
        for (row, beta) in rows_data.iter().zip(&main.betas) {
            want += row.dot(beta);
        }
        for f in 0..2 {
            let phis: Vec<f64> = (0..p)
                .map(|j| dot(rows_data[j].as_slice().unwrap(), tensor.fiber(j, f)))
                .collect();
            want += esp_naive(&phis, 2);
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn tally_counts_scale_linearly_in_features() {
        // Fixed m, factors, degrees; the op count must follow
        // c1 * p + c0 exactly, which keeps the cost linear in p.
        let m = 6;
        let counts: Vec<usize> = [4usize, 8, 16]
            .iter()
            .map(|&p| {
                let rows_data: Vec<Array1<f64>> =
                    (0..p).map(|_| Array1::from_elem(m, 0.1)).collect();
                let rows: Vec<ArrayView1<f64>> = rows_data.iter().map(|r| r.view()).collect();
                let main = MainEffects::zeros(p, m);
                let tensors = vec![
                    FactorTensor::zeros(2, m, p, 5),
                    FactorTensor::zeros(3, m, p, 5),
                ];
                let mut tally = CountTally::default();
                linear_predictor_tallied(&rows, &main, &tensors, &mut tally).unwrap();
                tally.0
            })
            .collect();
        // count(p) = a*p + b exactly, so doubling the p-step doubles the
        // count increment.
        assert_eq!(
            counts[2] - counts[1],
            2 * (counts[1] - counts[0]),
            "counts {counts:?}"
        );
    }

    proptest! {
        #[test]
        fn esp_recursion_equals_enumeration(
            phis in proptest::collection::vec(-3.0f64..3.0, 1..9),
            d in 0usize..5,
        ) {
            let naive = esp_naive(&phis, d);
            let fast = esp_recursive(&phis, d);
            prop_assert!((fast - naive).abs() <= 1e-10 * (1.0 + naive.abs()));
        }

        #[test]
        fn esp_multilinear_in_every_coordinate(
            phis in proptest::collection::vec(-2.0f64..2.0, 2..7),
            d in 1usize..4,
            j_pick in 0usize..6,
        ) {
            prop_assume!(d <= phis.len());
            let j = j_pick % phis.len();
            let r = multilinearity_residual(&phis, d, j);
            prop_assert!(r.abs() <= 1e-10);
        }
    }
}
