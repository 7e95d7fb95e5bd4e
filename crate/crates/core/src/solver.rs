//! Non-convex ADMM for the Kronecker-decomposable robust factorization
//! `X_i = A R_i Bᵀ + E_i`.
//!
//! The problem solved is
//!
//! ```text
//! min  α Σ‖R_i‖₁ + λ Σ‖E_i‖₁ + ½(‖A‖²_F + ‖B‖²_F)
//! s.t. X_i = A K_i Bᵀ + E_i,   R_i = K_i
//! ```
//!
//! with multipliers `Λ_i`, `Y_i` and penalties `μ`, `μ_K` that grow
//! geometrically up to a cap. One iteration updates, in order: `E`, `A`, `B`,
//! `K`, `R`, the two dual tensors, and the step sizes. Every primal update is
//! the exact minimizer of the augmented Lagrangian in its block, so the block
//! methods on [`SolverState`] are public and can be checked one at a time.
//!
//! Per-slice work runs on the rayon pool. Sums over slices are always
//! accumulated in ascending slice order, so results are bit-identical
//! regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{self, shrink_scalar, solve_gram_system, thin_svd, SteinSolver};
use crate::tensor::{reconstruct, Matrix, Tensor3};

/// Floor used for zero-norm denominators in the stopping rule.
pub const NORM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    /// Core dimension `r`; must satisfy `1 ≤ r ≤ min(m, n)`.
    pub rank: usize,
    /// Weight of the outlier penalty.
    pub lambda: f64,
    /// Weight of the core sparsity penalty.
    pub alpha: f64,
    /// Scale of the initial step sizes.
    pub eta: f64,
    /// Geometric growth factor of the step sizes.
    pub rho: f64,
    /// Step-size caps are the initial values times this factor.
    pub mu_cap_factor: f64,
    /// Tolerance on `max(err_rec, err_split)`.
    pub epsilon: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub const DEFAULT_ALPHA: f64 = 1e-2;
    pub const DEFAULT_ETA: f64 = 1.25;
    pub const DEFAULT_RHO: f64 = 1.2;
    pub const DEFAULT_MU_CAP_FACTOR: f64 = 1e7;
    pub const DEFAULT_EPSILON: f64 = 1e-12;
    pub const DEFAULT_MAX_ITER: usize = 1000;

    /// Defaults for `m × n` slices: `r = min(m, n)`, `λ = 1/√max(m, n)`.
    pub fn for_shape(m: usize, n: usize) -> Self {
        SolverConfig {
            rank: m.min(n),
            lambda: default_lambda(m, n),
            alpha: Self::DEFAULT_ALPHA,
            eta: Self::DEFAULT_ETA,
            rho: Self::DEFAULT_RHO,
            mu_cap_factor: Self::DEFAULT_MU_CAP_FACTOR,
            epsilon: Self::DEFAULT_EPSILON,
            max_iter: Self::DEFAULT_MAX_ITER,
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.rank == 0 || self.rank > m.min(n) {
            return bad(format!(
                "rank must satisfy 1 <= r <= min(m, n) = {}, got {}",
                m.min(n),
                self.rank
            ));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("eta", self.eta),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad(format!("rho must be > 1, got {}", self.rho));
        }
        if !(self.mu_cap_factor >= 1.0 && self.mu_cap_factor.is_finite()) {
            return bad(format!(
                "mu_cap_factor must be >= 1, got {}",
                self.mu_cap_factor
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }
}

/// `1/√max(m, n)`, the usual robust PCA weight.
pub fn default_lambda(m: usize, n: usize) -> f64 {
    1.0 / (m.max(n) as f64).sqrt()
}

/// All primal and dual variables of the ADMM.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// `m × r` column basis.
    pub a: Matrix,
    /// `n × r` row basis.
    pub b: Matrix,
    /// Sparse core, `r × r × N`.
    pub core: Tensor3,
    /// Split copy of the core, `r × r × N`.
    pub split: Tensor3,
    /// Outliers, `m × n × N`.
    pub outliers: Tensor3,
    /// Multipliers of the reconstruction constraint, `m × n × N`.
    pub dual_rec: Tensor3,
    /// Multipliers of the split constraint, `r × r × N`.
    pub dual_split: Tensor3,
    pub mu: f64,
    pub mu_k: f64,
    pub mu_cap: f64,
    pub mu_k_cap: f64,
    pub iter: usize,
}

/// Residuals of the two constraints, as used by the stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// `max_i ‖X_i − A R_i Bᵀ − E_i‖² / ‖X_i‖²`.
    pub rec: f64,
    /// `max_i ‖R_i − K_i‖² / ‖R_i‖²`.
    pub split: f64,
    /// Slices whose observation has zero norm (denominator floored).
    pub zero_observation_slices: Vec<usize>,
    /// Slices whose core has zero norm (denominator floored).
    pub zero_core_slices: Vec<usize>,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.rec.max(self.split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub err_rec: f64,
    pub err_split: f64,
    /// Step size used during this iteration.
    pub mu: f64,
    pub mu_k: f64,
}

/// Result of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct KdrsdlFactorization {
    pub a: Matrix,
    pub b: Matrix,
    pub core: Tensor3,
    pub outliers: Tensor3,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
}

impl KdrsdlFactorization {
    /// `L = R ×₁ A ×₂ B`.
    pub fn low_rank(&self) -> Result<Tensor3> {
        reconstruct(&self.core, &self.a, &self.b)
    }
}

/// A numerical failure during [`solve`], with the trace recorded so far.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct SolveError {
    #[source]
    pub source: Error,
    pub trace: Vec<TraceRow>,
}

fn sum_in_order(terms: Vec<Matrix>, rows: usize, cols: usize) -> Matrix {
    terms
        .into_iter()
        .fold(Matrix::zeros(rows, cols), |acc, t| acc + t)
}

fn tensor_shrink(t: &Tensor3, tau: f64) -> Tensor3 {
    t.map(|v| shrink_scalar(v, tau))
}

fn check_observation(x: &Tensor3) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite("observation tensor"));
    }
    Ok(())
}

/// SVD-based starting point.
///
/// Each slice is decomposed as `X_i = U_i S_i V_iᵀ` and truncated to `r`
/// components; `A` and `B` are the averages of the `U_i` and `V_i`, `R_i` the
/// diagonal of singular values.
///
/// Numerically zero singular values and their singular vectors are kept as
/// computed. Zeroing them instead would put whole rows of `K` and columns of
/// `A`, `B` at zero, which every later update maps back to zero.
pub fn initialize(x: &Tensor3, cfg: &SolverConfig) -> Result<SolverState> {
    check_observation(x)?;
    let (m, n, depth) = x.shape();
    cfg.validate(m, n)?;
    let r = cfg.rank;

    let per_slice: Vec<(Matrix, Matrix, Matrix)> = (0..depth)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let svd = thin_svd(&x.slice(k).into_owned())?;
            let u = svd.u.columns(0, r).into_owned();
            let v = svd.v.columns(0, r).into_owned();
            let core = Matrix::from_diagonal(&svd.singular_values.rows(0, r).into_owned());
            Ok((u, v, core))
        })
        .collect::<Result<_>>()?;

    let inv_depth = 1.0 / depth as f64;
    let mut a = Matrix::zeros(m, r);
    let mut b = Matrix::zeros(n, r);
    let mut cores = Vec::with_capacity(depth);
    for (u, v, c) in per_slice {
        a += u;
        b += v;
        cores.push(c);
    }
    a *= inv_depth;
    b *= inv_depth;
    let core = Tensor3::from_slices(&cores)?;

    let mu = initial_step(cfg.eta, depth, x.slice_norms().iter().sum());
    let mu_k = initial_step(cfg.eta, depth, core.slice_norms().iter().sum());

    Ok(SolverState {
        a,
        b,
        split: core.clone(),
        core,
        outliers: Tensor3::zeros(m, n, depth),
        dual_rec: Tensor3::zeros(m, n, depth),
        dual_split: Tensor3::zeros(r, r, depth),
        mu,
        mu_k,
        mu_cap: mu * cfg.mu_cap_factor,
        mu_k_cap: mu_k * cfg.mu_cap_factor,
        iter: 0,
    })
}

/// `η N / Σ‖·‖_F`, or `η` when every slice is zero.
fn initial_step(eta: f64, depth: usize, norm_sum: f64) -> f64 {
    if norm_sum > 0.0 {
        eta * depth as f64 / norm_sum
    } else {
        eta
    }
}

impl SolverState {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    fn check_against(&self, x: &Tensor3) -> Result<()> {
        let (m, n, depth) = x.shape();
        let r = self.rank();
        let ok = self.a.shape() == (m, r)
            && self.b.shape() == (n, r)
            && self.core.shape() == (r, r, depth)
            && self.split.shape() == (r, r, depth)
            && self.outliers.shape() == (m, n, depth)
            && self.dual_rec.shape() == (m, n, depth)
            && self.dual_split.shape() == (r, r, depth);
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "solver state (A {:?}, B {:?}, core {:?}) inconsistent with observation {:?}",
                self.a.shape(),
                self.b.shape(),
                self.core.shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// `K ×₁ A ×₂ B`.
    pub fn split_reconstruction(&self) -> Result<Tensor3> {
        reconstruct(&self.split, &self.a, &self.b)
    }

    /// `R ×₁ A ×₂ B`.
    pub fn low_rank(&self) -> Result<Tensor3> {
        reconstruct(&self.core, &self.a, &self.b)
    }

    /// `X − E`.
    fn cleaned(&self, x: &Tensor3) -> Result<Tensor3> {
        x.sub(&self.outliers)
    }

    /// `μ (X − E) + Λ`.
    fn weighted_target(&self, x: &Tensor3) -> Result<Tensor3> {
        let mu = self.mu;
        self.cleaned(x)?
            .zip_map(&self.dual_rec, |xt, l| mu * xt + l)
    }

    /// `E ← S_{λ/μ}(X − K ×₁ A ×₂ B + Λ/μ)`.
    pub fn update_outliers(&mut self, x: &Tensor3, cfg: &SolverConfig) -> Result<()> {
        let low = self.split_reconstruction()?;
        let inv_mu = 1.0 / self.mu;
        let arg = x
            .sub(&low)?
            .zip_map(&self.dual_rec, |v, l| v + l * inv_mu)?;
        self.outliers = tensor_shrink(&arg, cfg.lambda * inv_mu);
        Ok(())
    }

    /// `A ← [Σ (μX̃_i + Λ_i) B K_iᵀ] / [I + μ Σ K_i BᵀB K_iᵀ]`.
    pub fn update_a(&mut self, x: &Tensor3) -> Result<()> {
        let (m, r) = self.a.shape();
        let target = self.weighted_target(x)?;
        let btb = self.b.tr_mul(&self.b);
        let terms: Vec<(Matrix, Matrix)> = (0..x.depth())
            .into_par_iter()
            .map(|k| {
                let ki = self.split.slice(k);
                let rhs = target.slice(k) * &self.b * ki.transpose();
                let gram = ki * &btb * ki.transpose();
                (rhs, gram)
            })
            .collect();
        let (rhs, grams): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let rhs = sum_in_order(rhs, m, r);
        let gram = Matrix::identity(r, r) + sum_in_order(grams, r, r) * self.mu;
        self.a = solve_gram_system(&rhs, &gram)?;
        Ok(())
    }

    /// `B ← [Σ (μX̃_i + Λ_i)ᵀ A K_i] / [I + μ Σ K_iᵀ AᵀA K_i]`, using the
    /// already-updated `A`.
    pub fn update_b(&mut self, x: &Tensor3) -> Result<()> {
        let (n, r) = self.b.shape();
        let target = self.weighted_target(x)?;
        let ata = self.a.tr_mul(&self.a);
        let terms: Vec<(Matrix, Matrix)> = (0..x.depth())
            .into_par_iter()
            .map(|k| {
                let ki = self.split.slice(k);
                let rhs = target.slice(k).tr_mul(&self.a) * ki;
                let gram = ki.tr_mul(&ata) * ki;
                (rhs, gram)
            })
            .collect();
        let (rhs, grams): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let rhs = sum_in_order(rhs, n, r);
        let gram = Matrix::identity(r, r) + sum_in_order(grams, r, r) * self.mu;
        self.b = solve_gram_system(&rhs, &gram)?;
        Ok(())
    }

    /// The Stein problem whose solution is the exact `K_i` update.
    pub fn split_problem(&self, x: &Tensor3, k: usize) -> Result<numerics::SteinProblem> {
        let (lhs, rhs) = self.stein_factors();
        Ok(numerics::SteinProblem {
            lhs_factor: lhs,
            rhs_factor: rhs,
            constant: self.stein_constant(&self.weighted_target(x)?, k),
        })
    }

    fn stein_factors(&self) -> (Matrix, Matrix) {
        let lhs = self.a.tr_mul(&self.a) * (-self.mu / self.mu_k);
        let rhs = self.b.tr_mul(&self.b);
        (lhs, rhs)
    }

    /// `(1/μ_K)[Aᵀ(Λ_i + μX̃_i)B + Y_i] + R_i`.
    fn stein_constant(&self, target: &Tensor3, k: usize) -> Matrix {
        (self.a.tr_mul(&target.slice(k)) * &self.b + self.dual_split.slice(k)) / self.mu_k
            + self.core.slice(k)
    }

    /// Per slice, `K_i` solves `K_i + (μ/μ_K) AᵀA K_i BᵀB = C_i`.
    pub fn update_split(&mut self, x: &Tensor3) -> Result<()> {
        let (lhs, rhs) = self.stein_factors();
        let stein = SteinSolver::new(&lhs, &rhs)?;
        let target = self.weighted_target(x)?;
        let slices: Vec<Matrix> = (0..x.depth())
            .into_par_iter()
            .map(|k| stein.solve(&self.stein_constant(&target, k)))
            .collect::<Result<_>>()?;
        self.split = Tensor3::from_slices(&slices)?;
        Ok(())
    }

    /// `R ← S_{α/μ_K}(K − Y/μ_K)`.
    pub fn update_core(&mut self, cfg: &SolverConfig) -> Result<()> {
        let inv = 1.0 / self.mu_k;
        let arg = self.split.zip_map(&self.dual_split, |kv, y| kv - y * inv)?;
        self.core = tensor_shrink(&arg, cfg.alpha * inv);
        Ok(())
    }

    /// `Λ ← Λ + μ(X̃ − K ×₁ A ×₂ B)` and `Y ← Y + μ_K(R − K)`.
    pub fn update_duals(&mut self, x: &Tensor3) -> Result<()> {
        let (mu, mu_k) = (self.mu, self.mu_k);
        let residual = self.cleaned(x)?.sub(&self.split_reconstruction()?)?;
        self.dual_rec = self.dual_rec.zip_map(&residual, |l, d| l + mu * d)?;
        let split_gap = self.core.sub(&self.split)?;
        self.dual_split = self.dual_split.zip_map(&split_gap, |y, d| y + mu_k * d)?;
        Ok(())
    }

    /// `μ ← min(μ*, ρμ)`, `μ_K ← min(μ_K*, ρμ_K)`.
    pub fn update_step_sizes(&mut self, cfg: &SolverConfig) {
        self.mu = self.mu_cap.min(cfg.rho * self.mu);
        self.mu_k = self.mu_k_cap.min(cfg.rho * self.mu_k);
    }
}

/// One full ADMM pass.
pub fn iterate(mut state: SolverState, x: &Tensor3, cfg: &SolverConfig) -> Result<SolverState> {
    state.check_against(x)?;
    let iteration = state.iter + 1;
    let pass = |s: &mut SolverState| -> Result<()> {
        s.update_outliers(x, cfg)?;
        s.update_a(x)?;
        s.update_b(x)?;
        s.update_split(x)?;
        s.update_core(cfg)?;
        s.update_duals(x)?;
        s.update_step_sizes(cfg);
        Ok(())
    };
    pass(&mut state).map_err(|e| e.at_iteration(iteration))?;
    state.iter = iteration;
    Ok(state)
}

/// Normalized constraint residuals of `state` against `x`.
pub fn errors_of(state: &SolverState, x: &Tensor3) -> Result<Residuals> {
    state.check_against(x)?;
    let low = state.low_rank()?;
    let mut rec: f64 = 0.0;
    let mut split: f64 = 0.0;
    let mut zero_obs = Vec::new();
    let mut zero_core = Vec::new();
    for k in 0..x.depth() {
        let xk = x.slice(k);
        let denom = xk.norm_squared();
        if denom == 0.0 {
            zero_obs.push(k);
        }
        let num = (xk - low.slice(k) - state.outliers.slice(k)).norm_squared();
        rec = rec.max(num / denom.max(NORM_FLOOR));

        let rk = state.core.slice(k);
        let denom = rk.norm_squared();
        if denom == 0.0 {
            zero_core.push(k);
        }
        let num = (rk - state.split.slice(k)).norm_squared();
        split = split.max(num / denom.max(NORM_FLOOR));
    }
    Ok(Residuals {
        rec,
        split,
        zero_observation_slices: zero_obs,
        zero_core_slices: zero_core,
    })
}

/// Value of the augmented Lagrangian at `state`.
pub fn augmented_lagrangian(state: &SolverState, x: &Tensor3, cfg: &SolverConfig) -> Result<f64> {
    state.check_against(x)?;
    let l1 = |t: &Tensor3| t.as_slice().iter().map(|v| v.abs()).sum::<f64>();
    let dot = |p: &Tensor3, q: &Tensor3| {
        p.as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let rec_gap = x.sub(&state.split_reconstruction()?)?.sub(&state.outliers)?;
    let split_gap = state.core.sub(&state.split)?;
    Ok(cfg.alpha * l1(&state.core)
        + cfg.lambda * l1(&state.outliers)
        + 0.5 * (state.a.norm_squared() + state.b.norm_squared())
        + dot(&state.dual_rec, &rec_gap)
        + dot(&state.dual_split, &split_gap)
        + 0.5 * state.mu * rec_gap.norm().powi(2)
        + 0.5 * state.mu_k * split_gap.norm().powi(2))
}

/// Runs [`initialize`] then [`iterate`] until `max(err_rec, err_split) ≤ ε`
/// or `max_iter` passes. Hitting `max_iter` is not an error; the result has
/// `converged == false`.
pub fn solve(x: &Tensor3, cfg: &SolverConfig) -> Result<KdrsdlFactorization, SolveError> {
    let mut trace = Vec::new();
    let fail = |source: Error, trace: &Vec<TraceRow>| SolveError {
        source,
        trace: trace.clone(),
    };
    let mut state = initialize(x, cfg).map_err(|e| fail(e, &trace))?;
    let mut converged = false;
    while state.iter < cfg.max_iter {
        let (mu, mu_k) = (state.mu, state.mu_k);
        state = iterate(state, x, cfg).map_err(|e| fail(e, &trace))?;
        let res = errors_of(&state, x).map_err(|e| fail(e, &trace))?;
        trace.push(TraceRow {
            iter: state.iter,
            err_rec: res.rec,
            err_split: res.split,
            mu,
            mu_k,
        });
        if res.max() <= cfg.epsilon {
            converged = true;
            break;
        }
    }
    Ok(KdrsdlFactorization {
        a: state.a,
        b: state.b,
        core: state.core,
        outliers: state.outliers,
        iterations: state.iter,
        trace,
        converged,
    })
}
