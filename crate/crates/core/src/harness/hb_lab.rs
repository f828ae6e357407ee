//! Trajectories and rate tables behind `hb-lab`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hb_optim::{
    curvature_estimates, optimal_momentum, run_adaptive_heavy_ball, run_heavy_ball, OptimizerTrace, QuadraticProblem,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbLabConfig {
    /// Diagonal of `A`; `b = 0`.
    pub diag: Vec<f64>,
    /// Step size; `1/L` when absent.
    pub gamma: Option<f64>,
    /// Starting point; all ones when absent.
    pub x0: Option<Vec<f64>>,
    pub iters: usize,
    pub delta: f64,
    pub grad_tol: f64,
    /// Burn-in fraction discarded before measuring the contraction rate.
    pub burn_in: f64,
}

impl Default for HbLabConfig {
    fn default() -> Self {
        Self {
            diag: vec![1.0, 10.0],
            gamma: Some(0.1),
            x0: None,
            iters: 200,
            delta: 1e-3,
            grad_tol: 1e-8,
            burn_in: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub method: String,
    pub beta: Option<f64>,
    pub contraction: Option<f64>,
    pub predicted: Option<f64>,
    pub iters_to_tol: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct HbLabReport {
    pub nu: f64,
    pub ell: f64,
    pub gamma: f64,
    pub gd: OptimizerTrace,
    pub hb: OptimizerTrace,
    pub adaptive: OptimizerTrace,
    pub curvature: Vec<f64>,
    pub table: Vec<RateRow>,
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl HbLabReport {
    /// `k,dist_gd,dist_hb,dist_adaptive,grad_adaptive,beta_adaptive,curvature_hb`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("k,dist_gd,dist_hb,dist_adaptive,grad_adaptive,beta_adaptive,curvature_hb\n");
        for k in 0..self.hb.len() {
            let curv = if k == 0 { String::new() } else { opt_str(&self.curvature.get(k - 1)) };
            s.push_str(&format!(
                "{k},{:e},{:e},{:e},{:e},{},{curv}\n",
                self.gd.dist_to_opt[k],
                self.hb.dist_to_opt[k],
                self.adaptive.dist_to_opt[k],
                self.adaptive.grad_norms[k],
                self.adaptive.betas_applied[k],
            ));
        }
        s
    }

    /// `method,beta,contraction,predicted,iters_to_tol`.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("method,beta,contraction,predicted,iters_to_tol\n");
        for r in &self.table {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                opt_str(&r.beta),
                opt_str(&r.contraction),
                opt_str(&r.predicted),
                opt_str(&r.iters_to_tol)
            ));
        }
        s
    }
}

/// GD, heavy ball with the optimal momentum, and adaptive heavy ball on one
/// diagonal quadratic.
pub fn run_hb_lab(cfg: &HbLabConfig) -> Result<HbLabReport> {
    if cfg.diag.is_empty() {
        return Err(Error::Config("hb.diag must not be empty".into()));
    }
    let d = cfg.diag.len();
    let p = QuadraticProblem::diagonal(&cfg.diag, vec![0.0; d])?;
    let gamma = cfg.gamma.unwrap_or(1.0 / p.ell());
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![1.0; d]);
    let beta = optimal_momentum(p.nu(), gamma)?;
    let gd = run_heavy_ball(&p, &x0, gamma, 0.0, cfg.iters)?;
    let hb = run_heavy_ball(&p, &x0, gamma, beta, cfg.iters)?;
    let adaptive = run_adaptive_heavy_ball(&p, &x0, gamma, cfg.delta, cfg.iters)?;
    let curvature = curvature_estimates(&p, &hb);
    let gd_rate = (1.0 - gamma * p.nu()).abs().max((1.0 - gamma * p.ell()).abs());
    let table = vec![
        RateRow {
            method: "gd".into(),
            beta: Some(0.0),
            contraction: gd.contraction_rate(cfg.burn_in),
            predicted: Some(gd_rate),
            iters_to_tol: gd.first_grad_below(cfg.grad_tol),
        },
        RateRow {
            method: "heavy_ball_optimal".into(),
            beta: Some(beta),
            contraction: hb.contraction_rate(cfg.burn_in),
            predicted: Some(1.0 - (gamma * p.nu()).sqrt()),
            iters_to_tol: hb.first_grad_below(cfg.grad_tol),
        },
        RateRow {
            method: "adaptive_heavy_ball".into(),
            beta: None,
            contraction: adaptive.contraction_rate(cfg.burn_in),
            predicted: None,
            iters_to_tol: adaptive.first_grad_below(cfg.grad_tol),
        },
    ];
    Ok(HbLabReport { nu: p.nu(), ell: p.ell(), gamma, gd, hb, adaptive, curvature, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lab() {
        let r = run_hb_lab(&HbLabConfig::default()).unwrap();
        let hb = r.table[1].contraction.unwrap();
        assert!((hb - (1.0 - 0.1f64.sqrt())).abs() <= 0.02);
        assert_eq!(r.trace_csv().lines().count(), 202);
        assert!(r.table_csv().starts_with("method,beta,contraction,predicted,iters_to_tol\ngd,0,"));
    }
}
