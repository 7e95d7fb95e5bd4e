//! Seeded synthetic data following the factorization model.
//!
//! Bases of known rank are built as products of Gaussian factors,
//! `A = A₁ A₂ᵀ` with `A₁ ∈ ℝ^{m×r_A}`, `A₂ ∈ ℝ^{r×r_A}` (likewise for `B`), so
//! `rank(A) = r_A` almost surely. Core slices are standard normal. Each entry
//! of the corruption tensor is 0 with probability `zero_prob` and ±1 with equal
//! probability otherwise.
//!
//! Draw order is fixed: `A₁`, `A₂`, `B₁`, `B₂`, the core slices, then the
//! corruption entries, each in storage (column-major, slice-major) order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{reconstruct, Matrix, Tensor3};

/// Identifier of the pseudo-random stream, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    /// Number of slices `N`.
    pub depth: usize,
    pub rank_a: usize,
    pub rank_b: usize,
    /// Width of the generated bases.
    pub r: usize,
    /// Probability that an entry of the corruption is zero.
    pub zero_prob: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.n == 0 || self.depth == 0 || self.r == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.rank_a == 0 || self.rank_a > self.m.min(self.r) {
            return bad(format!(
                "rank_a must be in 1..=min(m, r) = {}, got {}",
                self.m.min(self.r),
                self.rank_a
            ));
        }
        if self.rank_b == 0 || self.rank_b > self.n.min(self.r) {
            return bad(format!(
                "rank_b must be in 1..=min(n, r) = {}, got {}",
                self.n.min(self.r),
                self.rank_b
            ));
        }
        if !(0.0..=1.0).contains(&self.zero_prob) {
            return bad(format!("zero_prob must lie in [0, 1], got {}", self.zero_prob));
        }
        Ok(())
    }
}

/// Everything used to build the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `L = R ×₁ A ×₂ B`.
    pub low_rank: Tensor3,
    /// Entries in `{−1, 0, +1}`.
    pub outliers: Tensor3,
    pub a: Matrix,
    pub b: Matrix,
    pub core: Tensor3,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    // from_fn walks column-major, which fixes the draw order
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Observations `L + E` and the ground truth that produced them.
pub fn generate(spec: &SyntheticSpec) -> Result<(Tensor3, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a1 = gaussian(&mut rng, spec.m, spec.rank_a);
    let a2 = gaussian(&mut rng, spec.r, spec.rank_a);
    let b1 = gaussian(&mut rng, spec.n, spec.rank_b);
    let b2 = gaussian(&mut rng, spec.r, spec.rank_b);
    let a = a1 * a2.transpose();
    let b = b1 * b2.transpose();

    let core = Tensor3::from_fn(spec.r, spec.r, spec.depth, |_, _, _| {
        rng.sample(StandardNormal)
    });
    let low_rank = reconstruct(&core, &a, &b)?;

    let p = spec.zero_prob;
    let outliers = Tensor3::from_fn(spec.m, spec.n, spec.depth, |_, _, _| {
        if rng.random::<f64>() < p {
            0.0
        } else if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    });
    let observations = low_rank.add(&outliers)?;
    Ok((
        observations,
        GroundTruth {
            low_rank,
            outliers,
            a,
            b,
            core,
        },
    ))
}

/// Fraction of entries with `|value| > tol`.
pub fn density(t: &Tensor3, tol: f64) -> f64 {
    let count = t.as_slice().iter().filter(|v| v.abs() > tol).count();
    count as f64 / t.as_slice().len() as f64
}
