//! Softmax, linear and momentum attention.
//!
//! Every kernelized variant shares the same readout: given a feature-mapped
//! query `φ(q)`, a `D×D_v` key–value summary `W` and a key sum `z`,
//! `v̂ = scale · φ(q)ᵀW / (φ(q)ᵀz + eps)`. The variants differ only in how
//! `W` is accumulated:
//!
//! | variant            | summary for position `i`                               |
//! |--------------------|--------------------------------------------------------|
//! | linear             | `Σ_{j≤N} φ(k_j)v_jᵀ`                                   |
//! | causal linear      | `Σ_{j≤i} φ(k_j)v_jᵀ`                                   |
//! | causal momentum    | `Σ_{j≤i} (1−β^{i−j+1})/(1−β) φ(k_j)v_jᵀ`, scale `γ`    |
//! | momentum           | `Σ_{j≤N} (1−β^{N−j+1})/(1−β) φ(k_j)v_jᵀ`, scale `γ`    |
//!
//! None of them materialise an `N×N` matrix.

mod connection;
mod linear;
mod momentum;
mod recurrent;
mod softmax;

pub use connection::{adaptive_connection_momentum, connection_coefficient, momentum_connection, LayerHistory};
#[allow(unused_imports)]
pub(crate) use connection::adaptive_value;
pub use linear::{causal_linear_attention, linear_attention};
pub use momentum::{causal_momentum_attention, momentum_attention, momentum_weight};
pub use recurrent::{causal_linear_rnn_step, causal_momentum_rnn_step, RecurrentState};
pub use softmax::softmax_attention;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, DenseMatrix, Real, Rng, SequenceBatch};

/// Query, key and value projections `W_Q, W_K ∈ ℝ^{D×D_x}`, `W_V ∈ ℝ^{D_v×D_x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
}

impl AttentionParams {
    pub fn new(w_q: DenseMatrix, w_k: DenseMatrix, w_v: DenseMatrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.cols() != w_v.cols() {
            return dim_err(format!(
                "W_Q {:?}, W_K {:?}, W_V {:?} are not conformable",
                w_q.shape(),
                w_k.shape(),
                w_v.shape()
            ));
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn random(d_x: usize, d: usize, d_v: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (d_x as f64).sqrt();
        Self {
            w_q: rng.normal_matrix(d, d_x, std),
            w_k: rng.normal_matrix(d, d_x, std),
            w_v: rng.normal_matrix(d_v, d_x, std),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.cols()
    }
}

/// Connection momentum `β̃`: a constant, or recomputed per forward pass from
/// consecutive layers' attention outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConnectionRepr", into = "ConnectionRepr")]
pub enum ConnectionMomentum {
    Constant(f64),
    Adaptive,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ConnectionRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<ConnectionRepr> for ConnectionMomentum {
    type Error = String;
    fn try_from(r: ConnectionRepr) -> std::result::Result<Self, String> {
        match r {
            ConnectionRepr::Value(v) => Ok(ConnectionMomentum::Constant(v)),
            ConnectionRepr::Word(w) if w == "adaptive" => Ok(ConnectionMomentum::Adaptive),
            ConnectionRepr::Word(w) => Err(format!("beta_tilde must be a number or \"adaptive\", got {w:?}")),
        }
    }
}

impl From<ConnectionMomentum> for ConnectionRepr {
    fn from(c: ConnectionMomentum) -> Self {
        match c {
            ConnectionMomentum::Constant(v) => ConnectionRepr::Value(v),
            ConnectionMomentum::Adaptive => ConnectionRepr::Word("adaptive".into()),
        }
    }
}

/// Hyperparameters of momentum attention and the momentum connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentumConfig {
    /// Attention momentum `β ∈ [0, 1)`.
    pub beta: f64,
    /// Attention step size `γ > 0`.
    pub gamma: f64,
    /// Connection momentum `β̃`.
    pub beta_tilde: ConnectionMomentum,
    /// Connection step size `γ̃ > 0`. Scales the momentum term in constant
    /// mode and sits under the square root in adaptive mode.
    pub gamma_tilde: f64,
    /// Projection threshold: adaptive `β̃` is clipped to `[0, 1 − δ]`.
    pub delta: f64,
    /// Denominator stabiliser.
    pub eps: f64,
}

impl Default for MomentumConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            gamma: 1.0,
            beta_tilde: ConnectionMomentum::Constant(0.0),
            gamma_tilde: 1.0,
            delta: 1e-3,
            eps: 1e-6,
        }
    }
}

impl MomentumConfig {
    pub fn with_momentum(beta: f64, gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_attention_momentum(self.beta, self.gamma)?;
        if let ConnectionMomentum::Constant(bt) = self.beta_tilde {
            if !(0.0..1.0).contains(&bt) {
                return Err(Error::Config(format!("beta_tilde = {bt} outside [0, 1)")));
            }
        }
        if !(self.gamma_tilde > 0.0) {
            return Err(Error::Config(format!("gamma_tilde = {} must be > 0", self.gamma_tilde)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps = {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

pub(crate) fn check_attention_momentum(beta: f64, gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "beta = {beta} outside [0, 1); training does not converge for beta >= 1"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma = {gamma} must be > 0")));
    }
    Ok(())
}

/// `Q = X W_Qᵀ`, `K = X W_Kᵀ`, `V = X W_Vᵀ`, token by token.
pub fn project_qkv(
    x: &SequenceBatch,
    p: &AttentionParams,
) -> Result<(SequenceBatch, SequenceBatch, SequenceBatch)> {
    if x.dim() != p.input_dim() {
        return dim_err(format!(
            "input dim {} does not match projection input dim {}",
            x.dim(),
            p.input_dim()
        ));
    }
    let project = |w: &DenseMatrix| {
        let mut out = SequenceBatch::zeros(x.batch(), x.len(), w.rows());
        for b in 0..x.batch() {
            for i in 0..x.len() {
                let xi = x.token(b, i);
                for (r, o) in out.token_mut(b, i).iter_mut().enumerate() {
                    *o = dot(w.row(r), xi);
                }
            }
        }
        out
    };
    Ok((project(&p.w_q), project(&p.w_k), project(&p.w_v)))
}

pub(crate) fn check_qkv<T: Real>(
    q: &SequenceBatch<T>,
    k: &SequenceBatch<T>,
    v: &SequenceBatch<T>,
) -> Result<()> {
    if !q.same_shape(k) || q.batch() != v.batch() || q.len() != v.len() {
        return dim_err(format!(
            "Q {:?}, K {:?}, V {:?} are not conformable",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if q.dim() == 0 {
        return dim_err("key dimension must be positive");
    }
    Ok(())
}

/// `out = scale · φ(q)ᵀ summary / (φ(q)ᵀ z + eps)` where `summary` is `D×D_v`
/// row-major.
#[inline]
pub(crate) fn readout<T: Real>(
    phi_q: &[T],
    summary: &[T],
    z: &[T],
    scale: T,
    eps: T,
    out: &mut [T],
) -> Result<()> {
    let dv = out.len();
    out.iter_mut().for_each(|o| *o = T::zero());
    for (d, &pq) in phi_q.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(&summary[d * dv..(d + 1) * dv]) {
            *o = *o + pq * w;
        }
    }
    let den = dot(phi_q, z) + eps;
    if !(den > T::zero()) || !den.is_finite() {
        return Err(Error::Numerical(format!(
            "attention denominator {den} is not positive"
        )));
    }
    for o in out.iter_mut() {
        *o = scale * *o / den;
    }
    Ok(())
}

/// `summary += φ(k) vᵀ`, `z += φ(k)`.
#[inline]
pub(crate) fn accumulate<T: Real>(summary: &mut [T], z: &mut [T], phi_k: &[T], v: &[T]) {
    let dv = v.len();
    for (d, &pk) in phi_k.iter().enumerate() {
        z[d] = z[d] + pk;
        for (s, &vc) in summary[d * dv..(d + 1) * dv].iter_mut().zip(v) {
            *s = *s + pk * vc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_projection_returns_input() {
        let mut rng = Rng::new(1);
        let x = rng.normal_batch(2, 3, 4, 1.0);
        let p = AttentionParams::new(
            DenseMatrix::identity(4),
            DenseMatrix::identity(4),
            DenseMatrix::identity(4),
        )
        .unwrap();
        let (q, k, v) = project_qkv(&x, &p).unwrap();
        assert_eq!(q, x);
        assert_eq!(k, x);
        assert_eq!(v, x);
    }

    #[test]
    fn scalar_projection() {
        let x = SequenceBatch::from_vec(1, 1, 1, vec![2.0]).unwrap();
        let w = DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        let p = AttentionParams::new(w.clone(), w.clone(), w).unwrap();
        let (q, _, _) = project_qkv(&x, &p).unwrap();
        assert_eq!(q.data(), &[6.0]);
    }

    #[test]
    fn random_projection_matches_per_token_loop() {
        let mut rng = Rng::new(8);
        let x = rng.normal_batch(2, 3, 4, 1.0);
        let p = AttentionParams::random(4, 5, 3, &mut rng);
        let (q, k, v) = project_qkv(&x, &p).unwrap();
        assert_eq!(q.shape(), (2, 3, 5));
        assert_eq!(v.shape(), (2, 3, 3));
        for b in 0..2 {
            for i in 0..3 {
                let xi = DenseMatrix::from_vec(4, 1, x.token(b, i).to_vec()).unwrap();
                for (out, w) in [(&q, &p.w_q), (&k, &p.w_k), (&v, &p.w_v)] {
                    let expect = w.matmul(&xi).unwrap();
                    for (a, e) in out.token(b, i).iter().zip(expect.data()) {
                        assert!((a - e).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn projection_shape_mismatch() {
        let mut rng = Rng::new(8);
        let x = rng.normal_batch(1, 2, 3, 1.0);
        let p = AttentionParams::random(4, 4, 4, &mut rng);
        assert!(matches!(project_qkv(&x, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn config_validation() {
        assert!(MomentumConfig::default().validate().is_ok());
        assert!(MomentumConfig::with_momentum(1.0, 1.0).validate().is_err());
        assert!(MomentumConfig::with_momentum(-0.1, 1.0).validate().is_err());
        assert!(MomentumConfig::with_momentum(0.5, 0.0).validate().is_err());
        let c = MomentumConfig { delta: 1.0, ..MomentumConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn connection_momentum_serde() {
        let c: MomentumConfig = toml::from_str("beta_tilde = \"adaptive\"\ngamma_tilde = 0.99").unwrap();
        assert_eq!(c.beta_tilde, ConnectionMomentum::Adaptive);
        let c: MomentumConfig = toml::from_str("beta_tilde = 0.5").unwrap();
        assert_eq!(c.beta_tilde, ConnectionMomentum::Constant(0.5));
        assert!(toml::from_str::<MomentumConfig>("beta_tilde = \"fast\"").is_err());
    }
}
