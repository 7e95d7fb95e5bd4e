//! Linear-algebra kernels used by the solvers.
//!
//! Factorizations (SVD, symmetric eigendecomposition, Cholesky) are delegated
//! to `nalgebra`; this module pins their output conventions (ordering, signs)
//! so that everything built on top of them is deterministic.

use nalgebra::{Cholesky, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Relative asymmetry tolerated by [`symmetric_eig`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Smallest admissible `|1 − d_i g_j|` in a Stein equation.
pub const STEIN_MARGIN: f64 = 1e-12;

/// Soft-thresholding of a single value. `|v| == tau` maps to exactly zero.
#[inline]
pub fn shrink_scalar(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Elementwise shrinkage `sign(x)·max(|x| − tau, 0)`.
pub fn shrink(x: &Matrix, tau: f64) -> Result<Matrix> {
    check_threshold(tau)?;
    Ok(x.map(|v| shrink_scalar(v, tau)))
}

pub(crate) fn check_threshold(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold must be finite and nonnegative, got {tau}"
        )));
    }
    Ok(())
}

/// Kronecker product `a ⊗ b`, of size `(a.rows·b.rows) × (a.cols·b.cols)`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = b.shape();
    Matrix::from_fn(a.nrows() * p, a.ncols() * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}

/// Sum of singular values.
pub fn nuclear_norm(x: &Matrix) -> Result<f64> {
    Ok(thin_svd(x)?.singular_values.sum())
}

/// Thin singular value decomposition `x = U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `m × k` with orthonormal columns, `k = min(m, n)`.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: DVector<f64>,
    /// `n × k` with orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (mut col, s) in us.column_iter_mut().zip(self.singular_values.iter()) {
            col *= *s;
        }
        us * self.v.transpose()
    }
}

/// Thin SVD with singular values sorted in nonincreasing order and a fixed
/// sign convention: the largest-magnitude entry of every column of `U` is
/// nonnegative (first such entry on ties), with `V` flipped to match.
pub fn thin_svd(x: &Matrix) -> Result<Svd> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input"));
    }
    let svd = x
        .clone()
        // a tighter tolerance than 5 eps can stall on rank-deficient input
        .try_svd(true, true, 5.0 * f64::EPSILON, 0)
        .ok_or(Error::NoConvergence("SVD"))?;
    let mut u = svd.u.expect("U requested");
    let mut v = svd.v_t.expect("Vᵀ requested").transpose();
    let s = svd.singular_values;

    // nalgebra sorts already; enforce it anyway in case of ties reordered by
    // the bidiagonal sweep.
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let sorted_s = DVector::from_iterator(k, order.iter().map(|&i| s[i].max(0.0)));
    u = Matrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    v = Matrix::from_columns(&order.iter().map(|&i| v.column(i)).collect::<Vec<_>>());

    for j in 0..k {
        let mut pivot = 0;
        let mut best = -1.0;
        for (i, val) in u.column(j).iter().enumerate() {
            if val.abs() > best {
                best = val.abs();
                pivot = i;
            }
        }
        if u[(pivot, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }

    Ok(Svd {
        u,
        singular_values: sorted_s,
        v,
    })
}

/// Relative asymmetry `max|x − xᵀ| / max|x|` (0 for the zero matrix).
fn asymmetry(x: &Matrix) -> f64 {
    let scale = x.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for j in 0..x.ncols() {
        for i in 0..j {
            worst = worst.max((x[(i, j)] - x[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Eigendecomposition of a symmetric matrix, `x = Q diag(d) Qᵀ` with `d`
/// nondecreasing and `Q` orthogonal.
pub fn symmetric_eig(x: &Matrix) -> Result<(Matrix, DVector<f64>)> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input"));
    }
    let asym = asymmetry(x);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let mut sym = (x + x.transpose()) * 0.5;
    // Entries far below the working precision of the matrix are flushed to
    // zero. The perturbation is within the solver's backward error, and
    // nalgebra's QR sweep returns NaN on some gram matrices whose unused
    // directions have decayed to ~1e-100.
    let floor = f64::EPSILON * sym.amax();
    sym.apply(|v| {
        if v.abs() < floor {
            *v = 0.0
        }
    });
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .filter(|e| e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|v| v.is_finite()))
        .ok_or(Error::NoConvergence("symmetric eigendecomposition"))?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let d = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let q = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    Ok((q, d))
}

/// Right-division by a symmetric positive definite matrix: returns `M` with
/// `M · gram = target`.
pub fn solve_gram_system(target: &Matrix, gram: &Matrix) -> Result<Matrix> {
    if !gram.is_square() || target.ncols() != gram.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "cannot right-divide a {}x{} matrix by a {}x{} matrix",
            target.nrows(),
            target.ncols(),
            gram.nrows(),
            gram.ncols()
        )));
    }
    // M·G = T  ⇔  G·Mᵀ = Tᵀ since G is symmetric.
    let chol = Cholesky::new(gram.clone()).ok_or(Error::NotPositiveDefinite)?;
    let mt = chol.solve(&target.transpose());
    if mt.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(mt.transpose())
}

/// The Stein (discrete-time Sylvester) equation `X − Ā X B̄ = C` with
/// symmetric `Ā` and `B̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinProblem {
    pub lhs_factor: Matrix,
    pub rhs_factor: Matrix,
    pub constant: Matrix,
}

/// Stein solver with both factors diagonalized once, reusable across many
/// right-hand sides.
///
/// With `Ā = P D Pᵀ` and `B̄ = Q G Qᵀ`, the equation becomes
/// `X̃_ij (1 − d_i g_j) = C̃_ij` for `X̃ = Pᵀ X Q`, `C̃ = Pᵀ C Q`. Preparation
/// costs one eigendecomposition per factor and each solve four products.
#[derive(Debug, Clone)]
pub struct SteinSolver {
    p: Matrix,
    q: Matrix,
    inv_denominators: Matrix,
}

impl SteinSolver {
    pub fn new(lhs_factor: &Matrix, rhs_factor: &Matrix) -> Result<Self> {
        if !lhs_factor.is_square() || !rhs_factor.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Stein factors must be square, got {:?} and {:?}",
                lhs_factor.shape(),
                rhs_factor.shape()
            )));
        }
        let (p, d) = symmetric_eig(lhs_factor).map_err(non_symmetric)?;
        let (q, g) = symmetric_eig(rhs_factor).map_err(non_symmetric)?;
        let mut margin = f64::INFINITY;
        let denominators = Matrix::from_fn(d.len(), g.len(), |i, j| {
            let den = 1.0 - d[i] * g[j];
            margin = margin.min(den.abs());
            den
        });
        if !(margin >= STEIN_MARGIN) {
            return Err(Error::SingularStein {
                margin,
                threshold: STEIN_MARGIN,
            });
        }
        Ok(SteinSolver {
            p,
            q,
            inv_denominators: denominators.map(|v| 1.0 / v),
        })
    }

    /// Shape of the unknown.
    pub fn shape(&self) -> (usize, usize) {
        (self.p.nrows(), self.q.nrows())
    }

    pub fn solve(&self, constant: &Matrix) -> Result<Matrix> {
        let (r, s) = self.shape();
        if constant.shape() != (r, s) {
            return Err(Error::DimensionMismatch(format!(
                "Stein constant must be {r}x{s}, got {:?}",
                constant.shape()
            )));
        }
        let c_tilde = self.p.tr_mul(constant) * &self.q;
        let x_tilde = c_tilde.component_mul(&self.inv_denominators);
        Ok(&self.p * x_tilde * self.q.transpose())
    }
}

fn non_symmetric(e: Error) -> Error {
    match e {
        Error::NotSymmetric(_) => Error::UnsupportedStein,
        other => other,
    }
}

/// Solves `X − Ā X B̄ = C` for symmetric `Ā`, `B̄`.
pub fn solve_stein(problem: &SteinProblem) -> Result<Matrix> {
    SteinSolver::new(&problem.lhs_factor, &problem.rhs_factor)?.solve(&problem.constant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_residual(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn shrink_examples() {
        let x = Matrix::from_row_slice(1, 2, &[1.2, -0.3]);
        let s = shrink(&x, 0.5).unwrap();
        assert!((s[(0, 0)] - 0.7).abs() < 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(shrink(&x, 0.0).unwrap(), x);
        let b = shrink(&Matrix::from_element(1, 1, 0.5), 0.5).unwrap();
        assert_eq!(b[(0, 0)].to_bits(), 0.0f64.to_bits());
        assert_eq!(shrink_scalar(-0.5, 0.5).to_bits(), 0.0f64.to_bits());
        assert!(shrink(&x, -1.0).is_err());
        assert!(shrink(&x, f64::NAN).is_err());
    }

    #[test]
    fn stein_degenerate_lhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_matrix(&mut rng, 3, 3);
        let b = random_matrix(&mut rng, 3, 3);
        let b = &b * b.transpose();
        let x = solve_stein(&SteinProblem {
            lhs_factor: Matrix::zeros(3, 3),
            rhs_factor: b,
            constant: c.clone(),
        })
        .unwrap();
        assert!(rel_residual(&x, &c) <= 1e-14);
    }

    #[test]
    fn stein_negative_identity() {
        let x = solve_stein(&SteinProblem {
            lhs_factor: -Matrix::identity(2, 2),
            rhs_factor: Matrix::identity(2, 2),
            constant: Matrix::identity(2, 2) * 2.0,
        })
        .unwrap();
        assert!((x - Matrix::identity(2, 2)).amax() <= 1e-15);
    }

    #[test]
    fn stein_rejects_singular_and_asymmetric() {
        let singular = SteinProblem {
            lhs_factor: Matrix::identity(2, 2),
            rhs_factor: Matrix::identity(2, 2),
            constant: Matrix::identity(2, 2),
        };
        assert!(matches!(
            solve_stein(&singular),
            Err(Error::SingularStein { .. })
        ));
        let asym = SteinProblem {
            lhs_factor: Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            rhs_factor: Matrix::identity(2, 2),
            constant: Matrix::identity(2, 2),
        };
        assert!(matches!(solve_stein(&asym), Err(Error::UnsupportedStein)));
        let mismatched = SteinProblem {
            lhs_factor: Matrix::identity(2, 2) * 0.5,
            rhs_factor: Matrix::identity(3, 3) * 0.5,
            constant: Matrix::identity(2, 2),
        };
        assert!(matches!(
            solve_stein(&mismatched),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gram_system_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_matrix(&mut rng, 3, 5);
        assert!(rel_residual(&solve_gram_system(&t, &Matrix::identity(5, 5)).unwrap(), &t) <= 1e-15);

        let g = random_matrix(&mut rng, 5, 5);
        let g = &g * g.transpose() + Matrix::identity(5, 5);
        let id = solve_gram_system(&g, &g).unwrap();
        assert!((id - Matrix::identity(5, 5)).amax() <= 1e-12);

        let m = solve_gram_system(&t, &g).unwrap();
        let oracle = &t * g.clone().try_inverse().unwrap();
        assert!((&m - &oracle).amax() <= 1e-10 * oracle.amax().max(1.0));
        assert!((&m * &g - &t).norm() <= 1e-10 * t.norm());
    }

    #[test]
    fn gram_system_rejects_indefinite() {
        let g = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_gram_system(&Matrix::identity(2, 2), &g),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(solve_gram_system(&Matrix::identity(2, 3), &Matrix::identity(2, 2)).is_err());
    }

    #[test]
    fn svd_of_diagonal() {
        let svd = thin_svd(&Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]))).unwrap();
        assert_eq!(svd.singular_values.as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn svd_of_zero() {
        let svd = thin_svd(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(svd.singular_values.len(), 3);
        assert!(svd.singular_values.iter().all(|&s| s == 0.0));
        assert!(thin_svd(&Matrix::from_element(2, 2, f64::INFINITY)).is_err());
    }

    #[test]
    fn svd_properties_and_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (m, n) in [(6, 4), (4, 6), (5, 5)] {
            let x = random_matrix(&mut rng, m, n);
            let svd = thin_svd(&x).unwrap();
            let k = m.min(n);
            assert_eq!(svd.u.shape(), (m, k));
            assert_eq!(svd.v.shape(), (n, k));
            assert!((svd.u.tr_mul(&svd.u) - Matrix::identity(k, k)).amax() <= 1e-12);
            assert!((svd.v.tr_mul(&svd.v) - Matrix::identity(k, k)).amax() <= 1e-12);
            assert!((svd.reconstruct() - &x).norm() <= 1e-10 * x.norm());
            let s = &svd.singular_values;
            assert!(s.iter().zip(s.iter().skip(1)).all(|(a, b)| a >= b));
            for col in svd.u.column_iter() {
                let (idx, _) = col.iter().enumerate().fold((0, -1.0), |(bi, bv), (i, v)| {
                    if v.abs() > bv { (i, v.abs()) } else { (bi, bv) }
                });
                assert!(col[idx] >= 0.0);
            }
        }
    }

    #[test]
    fn svd_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_matrix(&mut rng, 7, 5);
        let a = thin_svd(&x).unwrap();
        let b = thin_svd(&x).unwrap();
        assert!(a.u.iter().zip(b.u.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.v.iter().zip(b.v.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(a.singular_values, b.singular_values);
    }

    #[test]
    fn eig_examples() {
        let (_, d) = symmetric_eig(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 1.0, 1.0]);
        let (_, d) = symmetric_eig(&Matrix::from_diagonal(&DVector::from_vec(vec![5.0, -2.0]))).unwrap();
        assert_eq!(d.as_slice(), &[-2.0, 5.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 5, 5);
        let x = &x + x.transpose();
        let (q, d) = symmetric_eig(&x).unwrap();
        assert!((q.tr_mul(&q) - Matrix::identity(5, 5)).amax() <= 1e-10);
        assert!((&q * Matrix::from_diagonal(&d) * q.transpose() - &x).norm() <= 1e-10 * x.norm());
        assert!(d.iter().zip(d.iter().skip(1)).all(|(a, b)| a <= b));

        assert!(matches!(
            symmetric_eig(&Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&Matrix::identity(2, 2), &Matrix::identity(3, 3)), Matrix::identity(6, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random_matrix(&mut rng, 2, 3);
        assert_eq!(kron(&Matrix::from_element(1, 1, 2.0), &b), &b * 2.0);
        let a = random_matrix(&mut rng, 2, 2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 6));
        assert_eq!(k[(3, 5)], a[(1, 1)] * b[(1, 2)]);
        assert!((k.norm() - a.norm() * b.norm()).abs() <= 1e-12 * a.norm() * b.norm());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shrink_is_nonexpansive(seed in any::<u64>(), tau in 0.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_matrix(&mut rng, 4, 3) * 3.0;
                let y = random_matrix(&mut rng, 4, 3) * 3.0;
                let d = (shrink(&x, tau).unwrap() - shrink(&y, tau).unwrap()).norm();
                prop_assert!(d <= (&x - &y).norm() + 1e-15);
            }

            #[test]
            fn nuclear_norm_bounded_by_frobenius(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_matrix(&mut rng, m, n);
                let bound = (m.min(n) as f64).sqrt() * x.norm();
                prop_assert!(nuclear_norm(&x).unwrap() <= bound + 1e-10);
            }
        }
    }
}
