//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records each operation with its forward value; [`Tape::backward`]
//! walks it once in reverse. Attention composites are differentiated through
//! their streaming form, so training keeps the forward pass's `O(N)` cost for
//! the linear kinds. Momentum constants and per-row coefficients passed to
//! [`Tape::scale_rows`] are treated as constants.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, GRAD_FLOOR};
pub use tape::{Activation, AttentionKernel, Gradients, Tape, Var};
