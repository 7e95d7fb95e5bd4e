//! Robust Kronecker-decomposable component analysis.
//!
//! Given a stack of `N` observations `X_i` of size `m × n`, the solver in
//! [`solver`] recovers bases `A` (`m × r`), `B` (`n × r`), sparse cores `R_i`
//! and sparse outliers `E_i` such that `X_i ≈ A R_i Bᵀ + E_i`. The low-rank
//! part `L_i = A R_i Bᵀ` is separable: the implied dictionary is `B ⊗ A`, but
//! it is never formed.
//!
//! The crate also ships the matrix robust PCA baseline ([`rpca`]), a synthetic
//! data generator ([`synth`]), evaluation metrics ([`metrics`]), file formats
//! ([`storage`]) and the pipelines behind the `kdrsdl` command-line tool
//! ([`cli`]).
//!
//! ```
//! use kdrsdl::{solve, SolverConfig, synth::{generate, SyntheticSpec}};
//!
//! let spec = SyntheticSpec { m: 20, n: 20, depth: 6, rank_a: 3, rank_b: 3, r: 5, zero_prob: 1.0, seed: 3 };
//! let (x, truth) = generate(&spec).unwrap();
//! let fit = solve(&x, &SolverConfig::for_shape(20, 20).with_rank(5)).unwrap();
//! let err = kdrsdl::metrics::relative_error(&fit.low_rank().unwrap(), &truth.low_rank).unwrap();
//! assert!(err < 1e-3);
//! ```

pub mod cli;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod rpca;
pub mod solver;
pub mod storage;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use solver::{
    errors_of, initialize, iterate, solve, KdrsdlFactorization, Residuals, SolveError,
    SolverConfig, SolverState, TraceRow,
};
pub use tensor::{reconstruct, Matrix, Mode, Tensor3};

// guide chapters, compiled so their snippets run as doctests
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/stein.md")]
    mod stein {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/rpca.md")]
    mod rpca {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
