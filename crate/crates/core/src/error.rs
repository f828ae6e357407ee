use thiserror::Error;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Symmetry(f64),

    #[error("{0} did not converge")]
    Convergence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("iteration diverged at step {step} (distance to optimum {distance:e})")]
    Divergence { step: usize, distance: f64 },

    #[error("curvature estimate undefined: zero displacement")]
    EstimateUndefined,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        reason: String,
        manifest: Box<crate::harness::RunManifest>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
