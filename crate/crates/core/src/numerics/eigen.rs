use super::DenseMatrix;
use crate::error::{Error, Result};

const MAX_DIM: usize = 64;
const MAX_SWEEPS: usize = 100;

fn check_symmetric(a: &DenseMatrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a non-square {:?} matrix",
            a.shape()
        )));
    }
    let n = a.rows();
    let scale = a.max_abs().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > 1e-10 * scale {
        return Err(Error::Symmetry(worst));
    }
    Ok(())
}

/// All eigenvalues of a small symmetric matrix, ascending, by cyclic Jacobi
/// rotations.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    let n = a.rows();
    if n > MAX_DIM {
        return Err(Error::Dimension(format!(
            "symmetric eigensolver limited to {MAX_DIM}x{MAX_DIM}, got {n}x{n}"
        )));
    }
    // Symmetrize exactly so rotations act on a truly symmetric matrix.
    let mut m = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let total = m.frobenius_norm();
    if total == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "Jacobi eigenvalue sweep ({MAX_SWEEPS} sweeps)"
        )));
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// `(λ_min, λ_max)` of a symmetric matrix of dimension at most 64.
pub fn spectral_extremes(a: &DenseMatrix) -> Result<(f64, f64)> {
    let eig = symmetric_eigenvalues(a)?;
    match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => Ok((lo, hi)),
        _ => Err(Error::Dimension("eigenvalues of an empty matrix".into())),
    }
}
