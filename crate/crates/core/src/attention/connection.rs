use super::{ConnectionMomentum, MomentumConfig};
use crate::error::{dim_err, Result};
use crate::numerics::{l2_norm, SequenceBatch};

/// What the previous layer left behind for the momentum connection.
#[derive(Debug, Clone, Copy)]
pub struct LayerHistory<'a> {
    /// The previous layer's input `X_{ℓ−1}`.
    pub x_prev: &'a SequenceBatch,
    /// The previous layer's attention output `V̂_{ℓ−1}`; only read in adaptive mode.
    pub v_hat_prev: &'a SequenceBatch,
}

/// Adaptive connection momentum
/// `proj_{[0,1−δ]}((1 − √(γ̃·r))²)` with `r = ‖U_ℓ − U_{ℓ−1}‖_F / ‖U_{ℓ−1}‖_F`,
/// norms taken over the whole tensor.
///
/// A zero previous update has no defined ratio; it yields 0.
pub fn adaptive_connection_momentum(
    update_curr: &SequenceBatch,
    update_prev: &SequenceBatch,
    gamma_tilde: f64,
    delta: f64,
) -> Result<f64> {
    if !update_curr.same_shape(update_prev) {
        return dim_err(format!(
            "adaptive momentum of {:?} against {:?}",
            update_curr.shape(),
            update_prev.shape()
        ));
    }
    Ok(adaptive_value(
        update_curr.data(),
        update_prev.data(),
        gamma_tilde,
        delta,
    ))
}

/// Slice form of [`adaptive_connection_momentum`], used per token by the model.
pub(crate) fn adaptive_value(curr: &[f64], prev: &[f64], gamma_tilde: f64, delta: f64) -> f64 {
    let prev_norm = l2_norm(prev);
    if prev_norm == 0.0 {
        log::debug!("adaptive connection momentum: zero previous update, using 0");
        return 0.0;
    }
    let diff: f64 = curr
        .iter()
        .zip(prev)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let ratio = diff / prev_norm;
    let root = (gamma_tilde * ratio).max(0.0).sqrt();
    ((1.0 - root) * (1.0 - root)).clamp(0.0, 1.0 - delta)
}

/// The coefficient multiplying `X − X_prev`: `γ̃·β̃`, with `β̃` either the
/// constant or the adaptive value, and 0 without history.
pub fn connection_coefficient(
    v_hat: &SequenceBatch,
    prev: Option<LayerHistory<'_>>,
    cfg: &MomentumConfig,
) -> Result<f64> {
    let Some(prev) = prev else { return Ok(0.0) };
    match cfg.beta_tilde {
        ConnectionMomentum::Constant(bt) => Ok(cfg.gamma_tilde * bt),
        ConnectionMomentum::Adaptive => {
            Ok(cfg.gamma_tilde * adaptive_connection_momentum(v_hat, prev.v_hat_prev, cfg.gamma_tilde, cfg.delta)?)
        }
    }
}

/// `T_ℓ(X) = f_ℓ(V̂ + X + c·(X − X_{ℓ−1}))`.
///
/// `X_{ℓ−1}` is the previous layer's input, so the extra term is a heavy-ball
/// step across depth; the first layer (`prev = None`) reduces to the plain
/// residual connection `f_ℓ(V̂ + X)`.
pub fn momentum_connection(
    v_hat: &SequenceBatch,
    x: &SequenceBatch,
    prev: Option<LayerHistory<'_>>,
    cfg: &MomentumConfig,
    ff: impl FnOnce(SequenceBatch) -> SequenceBatch,
) -> Result<SequenceBatch> {
    if !v_hat.same_shape(x) {
        return dim_err(format!(
            "momentum connection of V̂ {:?} and X {:?}",
            v_hat.shape(),
            x.shape()
        ));
    }
    if let Some(p) = prev {
        if !p.x_prev.same_shape(x) || !p.v_hat_prev.same_shape(x) {
            return dim_err("previous layer tensors do not match the current layer");
        }
    }
    let coeff = connection_coefficient(v_hat, prev, cfg)?;
    let mut u = v_hat.clone();
    for (i, o) in u.data_mut().iter_mut().enumerate() {
        let xi = x.data()[i];
        let momentum = match prev {
            Some(p) if coeff != 0.0 => coeff * (xi - p.x_prev.data()[i]),
            _ => 0.0,
        };
        *o += xi + momentum;
    }
    Ok(ff(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff, Rng};

    fn scalar(x: f64) -> SequenceBatch {
        SequenceBatch::from_vec(1, 1, 1, vec![x]).unwrap()
    }

    fn constant(bt: f64, gt: f64) -> MomentumConfig {
        MomentumConfig {
            beta_tilde: ConnectionMomentum::Constant(bt),
            gamma_tilde: gt,
            ..MomentumConfig::default()
        }
    }

    #[test]
    fn scalar_hand_evaluation() {
        let (vh, x, xp) = (scalar(1.0), scalar(2.0), scalar(0.0));
        let hist = LayerHistory { x_prev: &xp, v_hat_prev: &vh };
        let out = momentum_connection(&vh, &x, Some(hist), &constant(0.5, 1.0), |u| u).unwrap();
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn zero_momentum_is_residual() {
        let mut rng = Rng::new(30);
        let vh = rng.normal_batch(2, 3, 4, 1.0);
        let x = rng.normal_batch(2, 3, 4, 1.0);
        let xp = rng.normal_batch(2, 3, 4, 1.0);
        let hist = LayerHistory { x_prev: &xp, v_hat_prev: &vh };
        let out = momentum_connection(&vh, &x, Some(hist), &constant(0.0, 1.0), |u| u).unwrap();
        let plain: Vec<f64> = vh.data().iter().zip(x.data()).map(|(a, b)| a + b).collect();
        assert_eq!(out.data(), plain.as_slice());
        let first = momentum_connection(&vh, &x, None, &constant(0.9, 1.0), |u| u).unwrap();
        assert_eq!(first.data(), plain.as_slice());
    }

    #[test]
    fn equal_inputs_cancel_momentum() {
        let mut rng = Rng::new(31);
        let vh = rng.normal_batch(1, 4, 3, 1.0);
        let x = rng.normal_batch(1, 4, 3, 1.0);
        let hist = LayerHistory { x_prev: &x, v_hat_prev: &vh };
        let with = momentum_connection(&vh, &x, Some(hist), &constant(0.99, 0.99), |u| u).unwrap();
        let without = momentum_connection(&vh, &x, None, &constant(0.99, 0.99), |u| u).unwrap();
        assert!(max_abs_diff(with.data(), without.data()) == 0.0);
    }

    #[test]
    fn feedforward_applied_last() {
        let (vh, x) = (scalar(1.0), scalar(2.0));
        let out = momentum_connection(&vh, &x, None, &constant(0.0, 1.0), |u| u.map(|t| 10.0 * t)).unwrap();
        assert_eq!(out.data(), &[30.0]);
    }

    #[test]
    fn adaptive_examples() {
        let prev = SequenceBatch::from_vec(1, 1, 2, vec![3.0, 4.0]).unwrap();
        // r = 0: unprojected value 1, clipped to 1 − δ.
        assert!((adaptive_connection_momentum(&prev, &prev, 1.0, 1e-3).unwrap() - 0.999).abs() < 1e-15);
        // ‖prev‖ = 5; a difference of norm 20 gives r = 4, (1 − 2)² = 1, clipped.
        let far = SequenceBatch::from_vec(1, 1, 2, vec![3.0 + 12.0, 4.0 + 16.0]).unwrap();
        assert!((adaptive_connection_momentum(&far, &prev, 1.0, 1e-3).unwrap() - 0.999).abs() < 1e-15);
        // Difference of norm 1.25 gives r = 0.25, (1 − 0.5)² = 0.25.
        let near = SequenceBatch::from_vec(1, 1, 2, vec![3.0 + 0.75, 4.0 + 1.0]).unwrap();
        assert!((adaptive_connection_momentum(&near, &prev, 1.0, 1e-3).unwrap() - 0.25).abs() < 1e-15);
        // Zero previous update falls back to 0.
        let zero = SequenceBatch::zeros(1, 1, 2);
        assert_eq!(adaptive_connection_momentum(&prev, &zero, 1.0, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn adaptive_mode_uses_previous_attention_output() {
        let vh_prev = SequenceBatch::from_vec(1, 1, 2, vec![3.0, 4.0]).unwrap();
        let vh = SequenceBatch::from_vec(1, 1, 2, vec![3.75, 5.0]).unwrap();
        let x = SequenceBatch::from_vec(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let xp = SequenceBatch::zeros(1, 1, 2);
        let cfg = MomentumConfig {
            beta_tilde: ConnectionMomentum::Adaptive,
            ..MomentumConfig::default()
        };
        let hist = LayerHistory { x_prev: &xp, v_hat_prev: &vh_prev };
        assert!((connection_coefficient(&vh, Some(hist), &cfg).unwrap() - 0.25).abs() < 1e-15);
        let out = momentum_connection(&vh, &x, Some(hist), &cfg, |u| u).unwrap();
        assert!(max_abs_diff(out.data(), &[3.75 + 1.25, 5.0 + 1.25]) < 1e-15);
        // γ̃ scales inside the root and again outside: 0.25·(1 − √(0.25·0.25))²
        let scaled = MomentumConfig { gamma_tilde: 0.25, ..cfg };
        assert!((connection_coefficient(&vh, Some(hist), &scaled).unwrap() - 0.140625).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let a = SequenceBatch::zeros(1, 2, 3);
        let b = SequenceBatch::zeros(1, 3, 3);
        assert!(momentum_connection(&a, &b, None, &MomentumConfig::default(), |u| u).is_err());
        assert!(adaptive_connection_momentum(&a, &b, 1.0, 1e-3).is_err());
    }
}
