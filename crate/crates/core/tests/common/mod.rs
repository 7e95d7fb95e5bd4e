//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use kdrsdl::storage::write_image;
use kdrsdl::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes a clip of a static rank-2 background crossed by a bright 6×6
/// square, as `frame_NNN.pgm` and exact `mask_NNN.pgm`. Returns the number
/// of frames.
pub fn moving_square_clip(dir: &Path) -> usize {
    let (m, n, frames) = (32, 40, 16);
    let background = Matrix::from_fn(m, n, |i, j| {
        0.2 + 0.3 * (i as f64 / m as f64) + 0.2 * (j as f64 * 0.3).sin().abs()
    });
    for k in 0..frames {
        let (r0, c0) = (4 + k, 2 + 2 * k);
        let inside = |i: usize, j: usize| (r0..r0 + 6).contains(&i) && (c0..c0 + 6).contains(&j);
        let mask = Matrix::from_fn(m, n, |i, j| if inside(i, j) { 1.0 } else { 0.0 });
        let frame = Matrix::from_fn(m, n, |i, j| if inside(i, j) { 0.95 } else { background[(i, j)] });
        write_image(dir.join(format!("frame_{k:03}.pgm")), &frame).unwrap();
        write_image(dir.join(format!("mask_{k:03}.pgm")), &mask).unwrap();
    }
    frames
}

/// Writes ten 32×32 grayscale images `img_NN.pgm` that are exactly rank 3
/// after 8-bit quantization: `A R_k Bᵀ` with band-indicator bases and whole
/// gray levels in every core.
pub fn block_images(dir: &Path, seed: u64) -> usize {
    let (m, n, count) = (32, 32, 10);
    let a = Matrix::from_fn(m, 3, |i, c| if i * 3 / m == c { 1.0 } else { 0.0 });
    let b = Matrix::from_fn(n, 3, |j, c| if (j * 7 / n) % 3 == c { 1.0 } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..count {
        let core = Matrix::from_fn(3, 3, |_, _| rng.random_range(30..226) as f64 / 255.0);
        write_image(dir.join(format!("img_{k:02}.pgm")), &(&a * core * b.transpose())).unwrap();
    }
    count
}

/// `metric,value` rows of a metrics file.
pub fn metrics(dir: &Path) -> Vec<(String, f64)> {
    kdrsdl::storage::read_metrics(dir.join("metrics.csv")).unwrap().values
}

pub fn metric(dir: &Path, name: &str) -> f64 {
    metrics(dir)
        .into_iter()
        .find(|(k, _)| k == name)
        .unwrap_or_else(|| panic!("no metric {name}"))
        .1
}

/// A random Stein problem of the kind the solver produces: even draws use
/// `−c·GᵀG` and `HᵀH`, odd draws symmetric factors with spectral radius
/// below one.
pub fn random_stein_problem(rng: &mut ChaCha8Rng, r: usize, draw: usize) -> kdrsdl::numerics::SteinProblem {
    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }
    let (lhs, rhs) = if draw.is_multiple_of(2) {
        let g = gaussian(rng, r + 2, r);
        let h = gaussian(rng, r + 1, r);
        let c = 10f64.powf(rng.random_range(-1.0..1.0));
        (g.tr_mul(&g) * -c, h.tr_mul(&h))
    } else {
        let s = gaussian(rng, r, r);
        let t = gaussian(rng, r, r);
        let s = (&s + s.transpose()) * 0.5;
        let t = (&t + t.transpose()) * 0.5;
        let rho = |m: &Matrix| m.clone().symmetric_eigen().eigenvalues.amax();
        let (ds, dt) = (rho(&s), rho(&t));
        (s / (1.05 * ds), t / (1.05 * dt))
    };
    let constant = gaussian(rng, r, r);
    kdrsdl::numerics::SteinProblem {
        lhs_factor: lhs,
        rhs_factor: rhs,
        constant,
    }
}

/// Solves `X − P X Q = C` through the `r² × r²` system
/// `(I − Qᵀ ⊗ P) vec(X) = vec(C)` with an LU factorization.
pub fn stein_oracle(p: &kdrsdl::numerics::SteinProblem) -> Matrix {
    let (a, b, c) = (&p.lhs_factor, &p.rhs_factor, &p.constant);
    let r = a.nrows();
    let s = b.nrows();
    let mut big = Matrix::identity(r * s, r * s);
    // vec(P X Q) = (Qᵀ ⊗ P) vec(X), column-major vec
    for j in 0..s {
        for l in 0..s {
            for i in 0..r {
                for k in 0..r {
                    big[(j * r + i, l * r + k)] -= b[(l, j)] * a[(i, k)];
                }
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
    let x = big.lu().solve(&rhs).expect("oracle system is nonsingular");
    Matrix::from_column_slice(r, s, x.as_slice())
}

pub fn stein_residual(p: &kdrsdl::numerics::SteinProblem, x: &Matrix) -> f64 {
    (x - &p.lhs_factor * x * &p.rhs_factor - &p.constant).norm()
}
