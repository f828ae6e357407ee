//! Momentum-augmented linear attention and the heavy-ball theory behind it.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] dense matrices, sequence batches, seeded RNG, symmetric
//!   eigenvalue extremes.
//! * [`feature_maps`] the positive kernel feature maps applied to queries and keys.
//! * [`attention`] softmax, linear, causal-linear and momentum attention in both
//!   batch and recurrent form, plus the momentum connection between layers.
//! * [`hb_optim`] gradient descent and heavy ball on quadratics, optimal and
//!   adaptive momentum, curvature estimation.
//! * [`autodiff`] a small tensor tape for training the toy transformer, with a
//!   finite-difference checker.
//! * [`harness`] copy-task data, model assembly, training, benchmarks and the CLI.

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod feature_maps;
pub mod harness;
pub mod hb_optim;
pub mod numerics;

pub use error::{Error, Result};
