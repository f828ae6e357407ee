//! Dense linear algebra substrate shared by every other module.

mod batch;
mod eigen;
mod matrix;
mod rng;
mod solve;

pub use batch::SequenceBatch;
pub use eigen::{spectral_extremes, symmetric_eigenvalues};
pub use matrix::{
    dot, frobenius_norm, l2_norm, matmul, max_abs_diff, DenseMatrix, Matrix,
};
pub use rng::Rng;
pub use solve::cholesky_solve;

use num_traits::Float;

/// Floating-point element type. `f64` everywhere in the core; `f32` is only
/// used by the benchmark's opt-in single precision mode.
pub trait Real: Float + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}
