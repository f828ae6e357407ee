//! Gradient descent and heavy ball on quadratics `f(x) = ½xᵀAx + xᵀb`.
//!
//! Covers the optimal constant momentum `(1 − √(γν))²`, the curvature
//! estimate `‖∇f(xᵏ) − ∇f(xᵏ⁻¹)‖ / ‖xᵏ − xᵏ⁻¹‖` that tends to `ν` along
//! heavy-ball iterates, and the adaptive momentum rule built from it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{cholesky_solve, dot, l2_norm, spectral_extremes, DenseMatrix, Rng};

/// Iterates farther than this from the optimum count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// `f(x) = ½xᵀAx + xᵀb` with symmetric positive-definite `A`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a: DenseMatrix,
    b: Vec<f64>,
    nu: f64,
    ell: f64,
    x_star: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::Dimension(format!(
                "A is {:?} but b has length {}",
                a.shape(),
                b.len()
            )));
        }
        let (nu, ell) = spectral_extremes(&a)?;
        if !(nu > 0.0) {
            return Err(Error::Domain(format!(
                "A must be positive definite (smallest eigenvalue {nu})"
            )));
        }
        let neg_b: Vec<f64> = b.iter().map(|x| -x).collect();
        let x_star = cholesky_solve(&a, &neg_b)?;
        Ok(Self { a, b, nu, ell, x_star })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>) -> Result<Self> {
        Self::new(DenseMatrix::from_diag(diag), b)
    }

    /// Random `A = Q Λ Qᵀ` with `Q` orthogonal, spectrum spanning exactly
    /// `[nu, ell]` (interior eigenvalues log-uniform), and Gaussian `b`.
    pub fn random_spd(d: usize, nu: f64, ell: f64, rng: &mut Rng) -> Result<Self> {
        if d == 0 || !(nu > 0.0 && ell >= nu) {
            return Err(Error::Domain(format!(
                "random_spd needs d > 0 and 0 < nu <= ell (d={d}, nu={nu}, ell={ell})"
            )));
        }
        let mut eig = vec![nu; d];
        if d > 1 {
            eig[d - 1] = ell;
            for e in eig.iter_mut().take(d - 1).skip(1) {
                *e = (nu.ln() + rng.uniform() * (ell.ln() - nu.ln())).exp();
            }
        }
        let q = random_orthogonal(d, rng);
        let scaled = DenseMatrix::from_fn(d, d, |i, j| q[(i, j)] * eig[j]);
        let mut a = scaled.matmul_transposed(&q)?;
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = avg;
                a[(j, i)] = avg;
            }
        }
        let b = rng.normal_vec(d, 1.0);
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `λ_min(A)`.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `λ_max(A)`.
    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.apply(x)) + dot(x, &self.b)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.apply(x);
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi += bi;
        }
        g
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| dot(self.a.row(i), x)).collect()
    }

    pub fn dist_to_opt(&self, x: &[f64]) -> f64 {
        distance(x, &self.x_star)
    }
}

fn random_orthogonal(d: usize, rng: &mut Rng) -> DenseMatrix {
    // Modified Gram–Schmidt on Gaussian columns.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v = rng.normal_vec(d, 1.0);
        for c in &cols {
            let proj = dot(&v, c);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= proj * ci;
            }
        }
        let n = l2_norm(&v);
        if n > 1e-8 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    DenseMatrix::from_fn(d, d, |i, j| cols[j][i])
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-iteration record; entry `k` describes iterate `xᵏ`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct OptimizerTrace {
    pub iterates: Vec<Vec<f64>>,
    pub grad_norms: Vec<f64>,
    /// Momentum used in the update that produced `xᵏ` (0 for `x⁰`).
    pub betas_applied: Vec<f64>,
    pub dist_to_opt: Vec<f64>,
}

impl OptimizerTrace {
    fn push(&mut self, p: &QuadraticProblem, x: Vec<f64>, beta: f64) -> Result<()> {
        let dist = p.dist_to_opt(&x);
        if !(dist <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                step: self.iterates.len(),
                distance: dist,
            });
        }
        self.grad_norms.push(l2_norm(&p.grad(&x)));
        self.dist_to_opt.push(dist);
        self.betas_applied.push(beta);
        self.iterates.push(x);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    /// Geometric mean of `‖xᵏ⁺¹ − x*‖ / ‖xᵏ − x*‖` after discarding the first
    /// `burn_in` fraction of iterations. `None` if the window is empty or the
    /// distance reaches zero at its start.
    pub fn contraction_rate(&self, burn_in: f64) -> Option<f64> {
        let last = self.dist_to_opt.len().checked_sub(1)?;
        let start = ((last as f64) * burn_in).floor() as usize;
        if start >= last || self.dist_to_opt[start] == 0.0 {
            return None;
        }
        let ratio = self.dist_to_opt[last] / self.dist_to_opt[start];
        Some(ratio.powf(1.0 / (last - start) as f64))
    }

    /// First iteration whose gradient norm is at most `tol`.
    pub fn first_grad_below(&self, tol: f64) -> Option<usize> {
        self.grad_norms.iter().position(|&g| g <= tol)
    }
}

/// `x − γ∇f(x)`.
pub fn gd_step(p: &QuadraticProblem, x: &[f64], gamma: f64) -> Vec<f64> {
    let g = p.grad(x);
    x.iter().zip(&g).map(|(xi, gi)| xi - gamma * gi).collect()
}

/// Momentum-state form: `m⁺ = βm + ∇f(x)`, `x⁺ = x − γm⁺`.
pub fn hb_step(p: &QuadraticProblem, x: &[f64], m: &[f64], gamma: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let g = p.grad(x);
    let m_next: Vec<f64> = m.iter().zip(&g).map(|(mi, gi)| beta * mi + gi).collect();
    let x_next = x.iter().zip(&m_next).map(|(xi, mi)| xi - gamma * mi).collect();
    (x_next, m_next)
}

/// Two-point form: `xᵏ⁺¹ = xᵏ − γ∇f(xᵏ) + β(xᵏ − xᵏ⁻¹)`.
pub fn hb_two_point_step(p: &QuadraticProblem, x: &[f64], x_prev: &[f64], gamma: f64, beta: f64) -> Vec<f64> {
    let g = p.grad(x);
    x.iter()
        .zip(&g)
        .zip(x_prev)
        .map(|((xi, gi), xp)| xi - gamma * gi + beta * (xi - xp))
        .collect()
}

/// Optimal heavy-ball momentum `(1 − √(γν))²` for step size `γ ≤ 1/L`.
pub fn optimal_momentum(nu: f64, gamma: f64) -> Result<f64> {
    let gn = gamma * nu;
    if !(gn > 0.0 && gn <= 1.0) {
        return Err(Error::Domain(format!("gamma * nu = {gn} outside (0, 1]")));
    }
    let r = 1.0 - gn.sqrt();
    Ok(r * r)
}

fn check_run(p: &QuadraticProblem, x0: &[f64], gamma: f64) -> Result<()> {
    if x0.len() != p.dim() {
        return Err(Error::Dimension(format!(
            "x0 has length {} for a {}-dimensional problem",
            x0.len(),
            p.dim()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("step size {gamma} must be > 0")));
    }
    if gamma * p.ell() > 1.0 + 1e-12 {
        log::warn!(
            "step size {gamma} exceeds 1/L = {}; convergence guarantees do not apply",
            1.0 / p.ell()
        );
    }
    Ok(())
}

/// Heavy ball from `x⁰` with `m⁰ = 0` for `iters` steps; the trace holds
/// `iters + 1` iterates.
pub fn run_heavy_ball(p: &QuadraticProblem, x0: &[f64], gamma: f64, beta: f64, iters: usize) -> Result<OptimizerTrace> {
    check_run(p, x0, gamma)?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!("beta = {beta} outside [0, 1)")));
    }
    let mut trace = OptimizerTrace::default();
    trace.push(p, x0.to_vec(), 0.0)?;
    let mut x = x0.to_vec();
    let mut m = vec![0.0; p.dim()];
    for _ in 0..iters {
        let (xn, mn) = hb_step(p, &x, &m, gamma, beta);
        trace.push(p, xn.clone(), beta)?;
        x = xn;
        m = mn;
    }
    Ok(trace)
}

/// `‖∇f(xᵏ) − ∇f(xᵏ⁻¹)‖ / ‖xᵏ − xᵏ⁻¹‖ = ‖A(xᵏ − xᵏ⁻¹)‖ / ‖xᵏ − xᵏ⁻¹‖ ∈ [ν, L]`.
pub fn curvature_estimate(x_k: &[f64], x_km1: &[f64], p: &QuadraticProblem) -> Result<f64> {
    let disp: Vec<f64> = x_k.iter().zip(x_km1).map(|(a, b)| a - b).collect();
    let n = l2_norm(&disp);
    if n == 0.0 {
        return Err(Error::EstimateUndefined);
    }
    Ok(l2_norm(&p.apply(&disp)) / n)
}

/// Adaptive momentum from consecutive gradients,
/// `proj_{[0,1−δ]}((1 − √(‖gᵏ − gᵏ⁻¹‖/‖gᵏ⁻¹‖))²)`; 0 when `gᵏ⁻¹ = 0`.
///
/// This is the form that approximates `xᵏ − xᵏ⁻¹` by a gradient step, so the
/// step size cancels.
pub fn adaptive_momentum_value(grad_k: &[f64], grad_km1: &[f64], delta: f64) -> f64 {
    let prev = l2_norm(grad_km1);
    if prev == 0.0 {
        return 0.0;
    }
    project_momentum(distance(grad_k, grad_km1) / prev, delta)
}

/// Adaptive momentum from the curvature estimate,
/// `proj_{[0,1−δ]}((1 − √(γ‖gᵏ − gᵏ⁻¹‖/‖xᵏ − xᵏ⁻¹‖))²)`; 0 without displacement.
pub fn adaptive_momentum_from_curvature(
    grad_k: &[f64],
    grad_km1: &[f64],
    x_k: &[f64],
    x_km1: &[f64],
    gamma: f64,
    delta: f64,
) -> f64 {
    let disp = distance(x_k, x_km1);
    if disp == 0.0 {
        return 0.0;
    }
    project_momentum(gamma * distance(grad_k, grad_km1) / disp, delta)
}

fn project_momentum(ratio: f64, delta: f64) -> f64 {
    let r = 1.0 - ratio.max(0.0).sqrt();
    (r * r).clamp(0.0, 1.0 - delta)
}

/// Which quantity drives the adaptive momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdaptiveRule {
    /// Ratio of consecutive gradient norms (step size cancelled).
    #[default]
    GradientRatio,
    /// `γ` times the curvature estimate.
    CurvatureRatio,
}

/// Heavy ball whose momentum is recomputed every step from the two most
/// recent gradients; the first step uses `β₀ = 0`.
pub fn run_adaptive_heavy_ball(p: &QuadraticProblem, x0: &[f64], gamma: f64, delta: f64, iters: usize) -> Result<OptimizerTrace> {
    run_adaptive_heavy_ball_with(p, x0, gamma, delta, iters, AdaptiveRule::GradientRatio)
}

pub fn run_adaptive_heavy_ball_with(
    p: &QuadraticProblem,
    x0: &[f64],
    gamma: f64,
    delta: f64,
    iters: usize,
    rule: AdaptiveRule,
) -> Result<OptimizerTrace> {
    check_run(p, x0, gamma)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta = {delta} outside (0, 1)")));
    }
    let mut trace = OptimizerTrace::default();
    trace.push(p, x0.to_vec(), 0.0)?;
    let mut x = x0.to_vec();
    let mut x_prev: Option<Vec<f64>> = None;
    let mut g_prev: Option<Vec<f64>> = None;
    let mut m = vec![0.0; p.dim()];
    for _ in 0..iters {
        let g = p.grad(&x);
        let beta = match (&g_prev, &x_prev) {
            (Some(gp), Some(xp)) => match rule {
                AdaptiveRule::GradientRatio => adaptive_momentum_value(&g, gp, delta),
                AdaptiveRule::CurvatureRatio => adaptive_momentum_from_curvature(&g, gp, &x, xp, gamma, delta),
            },
            _ => 0.0,
        };
        for (mi, gi) in m.iter_mut().zip(&g) {
            *mi = beta * *mi + gi;
        }
        let xn: Vec<f64> = x.iter().zip(&m).map(|(xi, mi)| xi - gamma * mi).collect();
        trace.push(p, xn.clone(), beta)?;
        x_prev = Some(std::mem::replace(&mut x, xn));
        g_prev = Some(g);
    }
    Ok(trace)
}

/// Curvature estimates along a heavy-ball trace; entry `k − 1` uses
/// `(xᵏ, xᵏ⁻¹)`. Stops at the first zero displacement.
pub fn curvature_estimates(p: &QuadraticProblem, trace: &OptimizerTrace) -> Vec<f64> {
    trace
        .iterates
        .windows(2)
        .map_while(|w| curvature_estimate(&w[1], &w[0], p).ok())
        .collect()
}
