//! Self-checks behind `equiv-check` and `grad-check`.

use serde::Serialize;

use super::model::{AttentionKind, ForwardOptions, Model, ModelConfig};
use crate::attention::{
    causal_linear_attention, causal_momentum_attention, causal_momentum_rnn_step, linear_attention,
    momentum_attention, ConnectionMomentum, MomentumConfig, RecurrentState,
};
use crate::autodiff::grad_check;
use crate::error::Result;
use crate::feature_maps::FeatureMap;
use crate::numerics::{max_abs_diff, Rng, SequenceBatch};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, max_error: f64, tol: f64) -> Self {
        Self { name: name.into(), max_error, tol, passed: max_error <= tol }
    }
}

pub fn checks_csv(checks: &[CheckResult]) -> String {
    let mut s = String::from("check,max_error,tol,passed\n");
    for c in checks {
        s.push_str(&format!("{},{:e},{:e},{}\n", c.name, c.max_error, c.tol, c.passed));
    }
    s
}

/// Streams the recurrent momentum step over one sequence.
pub fn stream_momentum(q: &SequenceBatch, k: &SequenceBatch, v: &SequenceBatch, cfg: &MomentumConfig) -> Result<SequenceBatch> {
    let (batch, n, d) = q.shape();
    let mut out = SequenceBatch::zeros(batch, n, v.dim());
    for b in 0..batch {
        let mut state = RecurrentState::new(d, v.dim());
        for i in 0..n {
            let (next, o) = causal_momentum_rnn_step(state, q.token(b, i), k.token(b, i), v.token(b, i), cfg, FeatureMap::EluPlusOne, cfg.eps)?;
            state = next;
            out.token_mut(b, i).copy_from_slice(&o);
        }
    }
    Ok(out)
}

/// Recurrent vs unrolled momentum attention over `instances` random draws
/// (`N ≤ 64`, `D, D_v ≤ 8`) for every `β ∈ {0, 0.1, 0.5, 0.9}`, `γ ∈ {0.5, 1}`,
/// plus the momentum-off reduction to linear attention.
pub fn equivalence_suite(seed: u64, instances: usize) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::new(seed);
    let fm = FeatureMap::EluPlusOne;
    let (mut rnn, mut red_causal, mut red_full) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let n = 1 + rng.below(64);
        let d = 1 + rng.below(8);
        let dv = 1 + rng.below(8);
        let q = rng.normal_batch(1, n, d, 1.0);
        let k = rng.normal_batch(1, n, d, 1.0);
        let v = rng.normal_batch(1, n, dv, 1.0);
        for beta in [0.0, 0.1, 0.5, 0.9] {
            for gamma in [0.5, 1.0] {
                let cfg = MomentumConfig::with_momentum(beta, gamma);
                let a = stream_momentum(&q, &k, &v, &cfg)?;
                let b = causal_momentum_attention(&q, &k, &v, &cfg, fm, cfg.eps)?;
                rnn = rnn.max(max_abs_diff(a.data(), b.data()));
            }
        }
        let off = MomentumConfig::with_momentum(0.0, 1.0);
        let a = causal_momentum_attention(&q, &k, &v, &off, fm, off.eps)?;
        let b = causal_linear_attention(&q, &k, &v, fm, off.eps)?;
        red_causal = red_causal.max(max_abs_diff(a.data(), b.data()));
        let a = momentum_attention(&q, &k, &v, &off, fm, off.eps)?;
        let b = linear_attention(&q, &k, &v, fm, off.eps)?;
        red_full = red_full.max(max_abs_diff(a.data(), b.data()));
    }
    Ok(vec![
        CheckResult::new("recurrent_vs_unrolled", rnn, 1e-10),
        CheckResult::new("momentum_off_equals_linear_causal", red_causal, 1e-12),
        CheckResult::new("momentum_off_equals_linear", red_full, 1e-12),
    ])
}

/// Small model configuration used for gradient checks.
pub fn grad_check_config(kind: AttentionKind) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        attention_kind: kind,
        momentum: MomentumConfig {
            beta: 0.5,
            gamma: 0.8,
            beta_tilde: match kind {
                AttentionKind::AdaptiveMomentum => ConnectionMomentum::Adaptive,
                _ => ConnectionMomentum::Constant(0.5),
            },
            gamma_tilde: 0.9,
            ..MomentumConfig::default()
        },
        vocab_size: 6,
        max_len: 8,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of whole-model gradients (every parameter
/// tensor) for each attention kind on a random batch of 2 × 8 tokens.
/// Adaptive connection coefficients are held at their base-point values.
pub fn model_grad_suite(seed: u64, kinds: &[AttentionKind], h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, &kind) in kinds.iter().enumerate() {
        let cfg = grad_check_config(kind);
        let mut rng = Rng::new(seed.wrapping_add(i as u64));
        let model = Model::build(&cfg, &mut rng)?;
        let (batch, len) = (2, cfg.max_len);
        let tokens: Vec<usize> = (0..batch * len).map(|_| rng.below(cfg.vocab_size)).collect();
        let targets: Vec<Option<usize>> = (0..batch * len)
            .map(|r| if r % len == len - 1 { None } else { Some(tokens[r + 1]) })
            .collect();
        let base = model.forward(&tokens, batch, len, &ForwardOptions::default())?;
        let opts = ForwardOptions { frozen_connection: Some(base.connection) };
        let report = grad_check(
            |ps| {
                let m = model.with_params(ps.to_vec())?;
                let (l, g, _) = m.loss_and_grads(&tokens, &targets, batch, len, &opts)?;
                Ok((l, g))
            },
            model.params(),
            h,
            tol,
        )?;
        out.push(CheckResult::new(format!("grad_{kind}"), report.max_error, tol));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        assert!(equivalence_suite(0, 10).unwrap().iter().all(|c| c.passed));
        let g = model_grad_suite(0, &[AttentionKind::Linear, AttentionKind::AdaptiveMomentum], 1e-5, 1e-5).unwrap();
        assert!(g.iter().all(|c| c.passed), "{g:?}");
        assert!(checks_csv(&g).starts_with("check,max_error,tol,passed\ngrad_linear,"));
    }
}
