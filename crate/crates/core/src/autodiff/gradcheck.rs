use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Scale below which a gradient tensor counts as zero when normalising.
pub const GRAD_FLOOR: f64 = 1e-8;

/// Outcome of [`grad_check`]; one relative error per parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub h: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error `‖a − n‖_∞ / max(‖a‖_∞, ‖n‖_∞, GRAD_FLOOR)`.
pub fn relative_error(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
    if analytic.shape() != numeric.shape() {
        return f64::INFINITY;
    }
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    diff / analytic.max_abs().max(numeric.max_abs()).max(GRAD_FLOOR)
}

/// Compares the analytic gradients returned by `f` against central
/// differences `(f(θ + h) − f(θ − h)) / 2h`, one coordinate at a time.
///
/// `f` maps parameters to `(loss, gradients)`, gradients in parameter order.
pub fn grad_check<F>(mut f: F, params: &[DenseMatrix], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[DenseMatrix]) -> Result<(f64, Vec<DenseMatrix>)>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        let mut numeric = DenseMatrix::zeros(params[p].rows(), params[p].cols());
        for e in 0..params[p].data().len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + h;
            let (up, _) = f(&work)?;
            work[p].data_mut()[e] = orig - h;
            let (down, _) = f(&work)?;
            work[p].data_mut()[e] = orig;
            numeric.data_mut()[e] = (up - down) / (2.0 * h);
        }
        errors.push(relative_error(grad, &numeric));
    }
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: errors.iter().all(|e| *e <= tol),
        errors,
        max_error,
        h,
        tol,
    })
}
