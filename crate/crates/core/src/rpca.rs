//! Matrix robust PCA by inexact augmented Lagrangian, used as the baseline.
//!
//! Tensors are flattened slice-per-column (see [`matricize`]) so the baseline
//! sees exactly the same data as the tensor solver.

use crate::error::{Error, Result};
use crate::numerics::{shrink, thin_svd, check_threshold};
use crate::tensor::{Matrix, Tensor3};

pub const DEFAULT_RHO: f64 = 1.5;
pub const DEFAULT_MU_SCALE: f64 = 1.25;
pub const DEFAULT_MU_CAP_FACTOR: f64 = 1e7;
pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaResult {
    pub low_rank: Matrix,
    pub sparse: Matrix,
    pub iterations: usize,
    pub converged: bool,
}

/// `1/√max(rows, cols)`.
pub fn default_lambda(x: &Matrix) -> f64 {
    1.0 / (x.nrows().max(x.ncols()) as f64).sqrt()
}

/// Singular value thresholding `U · S_tau(Σ) · Vᵀ`.
pub fn svt(x: &Matrix, tau: f64) -> Result<Matrix> {
    check_threshold(tau)?;
    let mut svd = thin_svd(x)?;
    let mut kept = 0;
    for s in svd.singular_values.iter_mut() {
        *s = (*s - tau).max(0.0);
        if *s > 0.0 {
            kept += 1;
        }
    }
    if kept == 0 {
        return Ok(Matrix::zeros(x.nrows(), x.ncols()));
    }
    let mut us = svd.u.columns(0, kept).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= svd.singular_values[j];
    }
    Ok(us * svd.v.columns(0, kept).transpose())
}

/// Principal component pursuit `min ‖A‖_* + λ‖E‖₁ s.t. X = A + E`.
///
/// Iterates `A ← SVT_{1/μ}(X − E + Y/μ)`, `E ← S_{λ/μ}(X − A + Y/μ)`,
/// `Y ← Y + μ(X − A − E)`, `μ ← min(μ̄, ρμ)` with `μ⁰ = 1.25/σ₁(X)`,
/// `ρ = 1.5`, `μ̄ = 10⁷ μ⁰`, and stops once `‖X − A − E‖_F ≤ ε‖X‖_F`.
/// The dual starts at `X / max(‖X‖₂, ‖X‖_∞/λ)`.
pub fn rpca_ialm(x: &Matrix, lambda: f64, epsilon: f64, max_iter: usize) -> Result<RpcaResult> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("RPCA input"));
    }
    if !(lambda > 0.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda and epsilon must be positive, got {lambda} and {epsilon}"
        )));
    }
    let (rows, cols) = x.shape();
    let norm_x = x.norm();
    if norm_x == 0.0 {
        return Ok(RpcaResult {
            low_rank: Matrix::zeros(rows, cols),
            sparse: Matrix::zeros(rows, cols),
            iterations: 0,
            converged: true,
        });
    }

    let spectral = thin_svd(x)?.singular_values[0];
    let mut dual = x / spectral.max(x.amax() / lambda);
    let mut mu = DEFAULT_MU_SCALE / spectral;
    let mu_cap = mu * DEFAULT_MU_CAP_FACTOR;
    let mut low = Matrix::zeros(rows, cols);
    let mut sparse = Matrix::zeros(rows, cols);

    for it in 1..=max_iter {
        let inv_mu = 1.0 / mu;
        low = svt(&(x - &sparse + &dual * inv_mu), inv_mu)?;
        sparse = shrink(&(x - &low + &dual * inv_mu), lambda * inv_mu)?;
        let gap = x - &low - &sparse;
        dual += &gap * mu;
        mu = mu_cap.min(DEFAULT_RHO * mu);
        if gap.norm() <= epsilon * norm_x {
            return Ok(RpcaResult {
                low_rank: low,
                sparse,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(RpcaResult {
        low_rank: low,
        sparse,
        iterations: max_iter,
        converged: false,
    })
}

/// Mode-3 matricization: slice `k` vectorized (column-major) as column `k`.
pub fn matricize(t: &Tensor3) -> Matrix {
    Matrix::from_column_slice(t.rows() * t.cols(), t.depth(), t.as_slice())
}

/// Inverse of [`matricize`].
pub fn fold(x: &Matrix, rows: usize, cols: usize) -> Result<Tensor3> {
    if x.nrows() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot fold {} rows into {rows}x{cols} slices",
            x.nrows()
        )));
    }
    Tensor3::from_vec(rows, cols, x.ncols(), x.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn svt_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        assert!((svt(&x, 0.0).unwrap() - &x).norm() <= 1e-10 * x.norm());
        let s1 = thin_svd(&x).unwrap().singular_values[0];
        assert_eq!(svt(&x, s1).unwrap(), Matrix::zeros(5, 4));
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&d, 2.0).unwrap();
        assert!((out - Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).amax() < 1e-14);
        assert!(svt(&x, -0.1).is_err());
    }

    #[test]
    fn svt_rank_and_nuclear_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let x = Matrix::from_fn(6, 5, |_, _| rng.random_range(-2.0..2.0));
            let tau = rng.random_range(0.0..2.0);
            let s = thin_svd(&x).unwrap().singular_values;
            let out = svt(&x, tau).unwrap();
            let so = thin_svd(&out).unwrap().singular_values;
            let expected_rank = s.iter().filter(|&&v| v > tau).count();
            let rank = so.iter().filter(|&&v| v > 1e-10 * s[0]).count();
            assert_eq!(rank, expected_rank);
            let expected_nuc: f64 = s.iter().map(|v| (v - tau).max(0.0)).sum();
            assert!((so.sum() - expected_nuc).abs() <= 1e-10 * s.sum());
        }
    }

    #[test]
    fn clean_rank_one() {
        let u = DVector::from_fn(30, |i, _| (i as f64 * 0.3).sin() + 1.5);
        let v = DVector::from_fn(20, |i, _| (i as f64 * 0.2).cos());
        let x = &u * v.transpose();
        let res = rpca_ialm(&x, default_lambda(&x), 1e-9, 500).unwrap();
        assert!(res.converged);
        assert!(res.sparse.norm() <= 1e-7 * x.norm(), "{}", res.sparse.norm());
        assert!((&res.low_rank + &res.sparse - &x).norm() <= 1e-9 * x.norm());
    }

    #[test]
    fn pure_sparse_input() {
        let mut x = Matrix::zeros(40, 40);
        x[(3, 7)] = 50.0;
        x[(20, 1)] = -40.0;
        x[(33, 33)] = 60.0;
        let res = rpca_ialm(&x, default_lambda(&x), 1e-8, 500).unwrap();
        assert!(res.converged);
        assert!(res.low_rank.norm() <= 1e-6 * x.norm(), "{}", res.low_rank.norm());
        assert!((&res.sparse - &x).norm() <= 1e-6 * x.norm());
    }

    #[test]
    fn zero_and_invalid_input() {
        let res = rpca_ialm(&Matrix::zeros(3, 3), 0.5, 1e-7, 10).unwrap();
        assert!(res.converged && res.low_rank.norm() == 0.0);
        assert!(rpca_ialm(&Matrix::from_element(2, 2, f64::NAN), 0.5, 1e-7, 10).is_err());
    }

    #[test]
    fn matricize_round_trip() {
        let t = Tensor3::from_fn(3, 2, 4, |i, j, k| (i + 10 * j + 100 * k) as f64);
        let m = matricize(&t);
        assert_eq!(m.shape(), (6, 4));
        assert_eq!(m[(1 + 3, 2)], t[(1, 1, 2)]);
        assert_eq!(fold(&m, 3, 2).unwrap(), t);
        assert!(fold(&m, 4, 2).is_err());
    }
}
