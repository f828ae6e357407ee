use serde::{Deserialize, Serialize};

use crate::attention::{adaptive_value, ConnectionMomentum, MomentumConfig};
use crate::autodiff::{Activation, AttentionKernel, Tape, Var};
use crate::error::{Error, Result};
use crate::feature_maps::FeatureMap;
use crate::numerics::{DenseMatrix, Rng};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Softmax,
    Linear,
    Momentum,
    MomentumWithConnection,
    AdaptiveMomentum,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 5] = [
        AttentionKind::Softmax,
        AttentionKind::Linear,
        AttentionKind::Momentum,
        AttentionKind::MomentumWithConnection,
        AttentionKind::AdaptiveMomentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Softmax => "softmax",
            AttentionKind::Linear => "linear",
            AttentionKind::Momentum => "momentum",
            AttentionKind::MomentumWithConnection => "momentum_with_connection",
            AttentionKind::AdaptiveMomentum => "adaptive_momentum",
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown attention kind `{s}`")))
    }
}

/// Nonlinearity of the feedforward block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfActivation {
    Relu,
    #[default]
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub attention_kind: AttentionKind,
    pub momentum: MomentumConfig,
    /// Embedding rows, separator included.
    pub vocab_size: usize,
    /// Learned positions available.
    pub max_len: usize,
    pub feature_map: FeatureMap,
    pub activation: FfActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 64,
            attention_kind: AttentionKind::Linear,
            momentum: MomentumConfig::default(),
            vocab_size: 11,
            max_len: 32,
            feature_map: FeatureMap::EluPlusOne,
            activation: FfActivation::Gelu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model = {} is not divisible by n_heads = {}",
                self.d_model, self.n_heads
            )));
        }
        self.momentum.validate()?;
        if self.attention_kind == AttentionKind::MomentumWithConnection
            && self.momentum.beta_tilde == ConnectionMomentum::Adaptive
        {
            return Err(Error::Config(
                "momentum_with_connection needs a constant beta_tilde; use adaptive_momentum".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ff);
        let layer = 2 * d + 3 * d * d + 2 * d + f * d + f + d * f + d;
        v * d + self.max_len * d + self.n_layers * layer + 2 * d + v * d + v
    }

    fn kernel(&self) -> AttentionKernel {
        let m = &self.momentum;
        match self.attention_kind {
            AttentionKind::Softmax => AttentionKernel::Softmax { causal: true },
            AttentionKind::Linear => AttentionKernel::Linear { causal: true, eps: m.eps },
            _ => AttentionKernel::Momentum { causal: true, beta: m.beta, gamma: m.gamma, eps: m.eps },
        }
    }
}

/// Per-layer parameter indices into [`Model::params`].
#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    w_q: usize,
    w_k: usize,
    w_v: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Decoder-only toy transformer. Layer `ℓ` computes
/// `U = V̂ + X + c·(X − X_{ℓ−1})` with `V̂` the concatenated causal attention
/// heads of `LN(X)`, then `f(U) = U + W₂ act(W₁ LN(U) + b₁) + b₂`. The
/// coefficient `c` is 0 except for the momentum-connection kinds.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: Vec<DenseMatrix>,
    names: Vec<String>,
    layers: Vec<LayerSlots>,
    tok_emb: usize,
    pos_emb: usize,
    lnf_g: usize,
    lnf_b: usize,
    w_out: usize,
    b_out: usize,
}

/// Knobs for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Replace the per-row connection coefficients of each layer (one vector
    /// per layer). Used to hold adaptive coefficients fixed.
    pub frozen_connection: Option<Vec<Vec<f64>>>,
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub logits: Var,
    /// Output of each layer, rows stacked as `batch·len × d_model`.
    pub layer_outputs: Vec<Var>,
    /// Per-row connection coefficient used in each layer.
    pub connection: Vec<Vec<f64>>,
}

impl Model {
    pub fn build(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut m = Model {
            cfg: cfg.clone(),
            params: Vec::new(),
            names: Vec::new(),
            layers: Vec::new(),
            tok_emb: 0,
            pos_emb: 0,
            lnf_g: 0,
            lnf_b: 0,
            w_out: 0,
            b_out: 0,
        };
        let add = |m: &mut Model, name: String, value: DenseMatrix| {
            m.params.push(value);
            m.names.push(name);
            m.params.len() - 1
        };
        let dense = |rng: &mut Rng, rows: usize, cols: usize| rng.normal_matrix(rows, cols, 1.0 / (cols as f64).sqrt());
        let ones = |n: usize| DenseMatrix::from_fn(1, n, |_, _| 1.0);
        m.tok_emb = add(&mut m, "tok_emb".into(), rng.normal_matrix(v, d, 1.0));
        m.pos_emb = add(&mut m, "pos_emb".into(), rng.normal_matrix(cfg.max_len, d, 1.0));
        for l in 0..cfg.n_layers {
            let slots = LayerSlots {
                ln1_g: add(&mut m, format!("layer{l}.ln1_g"), ones(d)),
                ln1_b: add(&mut m, format!("layer{l}.ln1_b"), DenseMatrix::zeros(1, d)),
                w_q: add(&mut m, format!("layer{l}.w_q"), dense(rng, d, d)),
                w_k: add(&mut m, format!("layer{l}.w_k"), dense(rng, d, d)),
                w_v: add(&mut m, format!("layer{l}.w_v"), dense(rng, d, d)),
                ln2_g: add(&mut m, format!("layer{l}.ln2_g"), ones(d)),
                ln2_b: add(&mut m, format!("layer{l}.ln2_b"), DenseMatrix::zeros(1, d)),
                w1: add(&mut m, format!("layer{l}.w1"), dense(rng, f, d)),
                b1: add(&mut m, format!("layer{l}.b1"), DenseMatrix::zeros(1, f)),
                w2: add(&mut m, format!("layer{l}.w2"), dense(rng, d, f)),
                b2: add(&mut m, format!("layer{l}.b2"), DenseMatrix::zeros(1, d)),
            };
            m.layers.push(slots);
        }
        m.lnf_g = add(&mut m, "lnf_g".into(), ones(d));
        m.lnf_b = add(&mut m, "lnf_b".into(), DenseMatrix::zeros(1, d));
        m.w_out = add(&mut m, "w_out".into(), dense(rng, v, d));
        m.b_out = add(&mut m, "b_out".into(), DenseMatrix::zeros(1, v));
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[DenseMatrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    /// Same architecture with the given parameter values.
    pub fn with_params(&self, params: Vec<DenseMatrix>) -> Result<Self> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("parameter set does not match the model".into()));
        }
        Ok(Self { params, ..self.clone() })
    }

    /// Records the forward pass for `batch` sequences of `len` tokens.
    pub fn forward(&self, tokens: &[usize], batch: usize, len: usize, opts: &ForwardOptions) -> Result<Forward> {
        let cfg = &self.cfg;
        if tokens.len() != batch * len {
            return Err(Error::Shape(format!("{} tokens for batch {batch} × len {len}", tokens.len())));
        }
        if len == 0 || len > cfg.max_len {
            return Err(Error::Shape(format!("sequence length {len} outside 1..={}", cfg.max_len)));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Shape(format!("token {t} outside the vocabulary of {}", cfg.vocab_size)));
        }
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|m| tape.leaf(m.clone())).collect();
        let kernel = self.cfg.kernel();
        let phi = Activation::Feature(cfg.feature_map);
        let act = match cfg.activation {
            FfActivation::Relu => Activation::Relu,
            FfActivation::Gelu => Activation::Gelu,
        };
        let hd = cfg.head_dim();

        let emb = tape.gather_rows(p[self.tok_emb], tokens)?;
        let pos_rows: Vec<usize> = (0..len).collect();
        let pos = tape.gather_rows(p[self.pos_emb], &pos_rows)?;
        let pos = tape.tile_rows(pos, batch);
        let mut x = tape.add(emb, pos)?;

        let mut prev: Option<(Var, DenseMatrix)> = None;
        let mut layer_outputs = Vec::with_capacity(self.layers.len());
        let mut connection = Vec::with_capacity(self.layers.len());
        for (l, s) in self.layers.iter().enumerate() {
            let xn = tape.layer_norm(x, p[s.ln1_g], p[s.ln1_b], LAYER_NORM_EPS)?;
            let q = tape.linear(xn, p[s.w_q])?;
            let k = tape.linear(xn, p[s.w_k])?;
            let v = tape.linear(xn, p[s.w_v])?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let cols = h * hd..(h + 1) * hd;
                let qh = tape.slice_cols(q, cols.start, cols.end)?;
                let kh = tape.slice_cols(k, cols.start, cols.end)?;
                let vh = tape.slice_cols(v, cols.start, cols.end)?;
                let (qh, kh) = match kernel {
                    AttentionKernel::Softmax { .. } => (qh, kh),
                    _ => (tape.map(qh, phi), tape.map(kh, phi)),
                };
                heads.push(tape.attention(qh, kh, vh, kernel, batch, len)?);
            }
            let v_hat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
            let mut u = tape.add(v_hat, x)?;

            let coeffs = match (&opts.frozen_connection, &prev) {
                (Some(frozen), _) => frozen
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::Shape(format!("no frozen connection coefficients for layer {l}")))?,
                (None, None) => vec![0.0; batch * len],
                (None, Some((_, v_prev))) => self.connection_coefficients(tape.value(v_hat), v_prev),
            };
            if coeffs.len() != batch * len {
                return Err(Error::Shape(format!("layer {l}: {} connection coefficients", coeffs.len())));
            }
            if let Some((x_prev, _)) = &prev {
                if coeffs.iter().any(|&c| c != 0.0) {
                    let dx = tape.sub(x, *x_prev)?;
                    let scaled = tape.scale_rows(dx, &coeffs)?;
                    u = tape.add(u, scaled)?;
                }
            }
            connection.push(coeffs);

            let un = tape.layer_norm(u, p[s.ln2_g], p[s.ln2_b], LAYER_NORM_EPS)?;
            let h1 = tape.linear(un, p[s.w1])?;
            let h1 = tape.add_bias(h1, p[s.b1])?;
            let h1 = tape.map(h1, act);
            let h2 = tape.linear(h1, p[s.w2])?;
            let h2 = tape.add_bias(h2, p[s.b2])?;
            let out = tape.add(u, h2)?;

            prev = Some((x, tape.value(v_hat).clone()));
            layer_outputs.push(out);
            x = out;
        }
        let xf = tape.layer_norm(x, p[self.lnf_g], p[self.lnf_b], LAYER_NORM_EPS)?;
        let logits = tape.linear(xf, p[self.w_out])?;
        let logits = tape.add_bias(logits, p[self.b_out])?;
        Ok(Forward { tape, params: p, logits, layer_outputs, connection })
    }

    /// Row coefficients multiplying `X − X_{ℓ−1}`.
    ///
    /// Adaptive values are computed per token from that token's attention
    /// output in this and the previous layer, which keeps the model causal.
    fn connection_coefficients(&self, v_hat: &DenseMatrix, v_prev: &DenseMatrix) -> Vec<f64> {
        let m = &self.cfg.momentum;
        let rows = v_hat.rows();
        match (self.cfg.attention_kind, m.beta_tilde) {
            (AttentionKind::MomentumWithConnection, ConnectionMomentum::Constant(bt)) => {
                vec![m.gamma_tilde * bt; rows]
            }
            (AttentionKind::AdaptiveMomentum, _) => (0..rows)
                .map(|r| m.gamma_tilde * adaptive_value(v_hat.row(r), v_prev.row(r), m.gamma_tilde, m.delta))
                .collect(),
            _ => vec![0.0; rows],
        }
    }

    /// Logits, mean cross-entropy over rows with a target, and gradients in
    /// parameter order.
    pub fn loss_and_grads(
        &self,
        tokens: &[usize],
        targets: &[Option<usize>],
        batch: usize,
        len: usize,
        opts: &ForwardOptions,
    ) -> Result<(f64, Vec<DenseMatrix>, Forward)> {
        let mut fwd = self.forward(tokens, batch, len, opts)?;
        let loss = fwd.tape.softmax_cross_entropy(fwd.logits, targets)?;
        let value = fwd.tape.scalar(loss)?;
        let grads = fwd.tape.backward(loss)?;
        let g = fwd.params.iter().map(|&v| grads.wrt(v).clone()).collect();
        Ok((value, g, fwd))
    }

    pub fn logits(&self, tokens: &[usize], batch: usize, len: usize) -> Result<DenseMatrix> {
        let fwd = self.forward(tokens, batch, len, &ForwardOptions::default())?;
        Ok(fwd.tape.value(fwd.logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::numerics::max_abs_diff;

    fn small(kind: AttentionKind) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            attention_kind: kind,
            momentum: MomentumConfig {
                beta: 0.3,
                gamma: 0.7,
                beta_tilde: match kind {
                    AttentionKind::AdaptiveMomentum => ConnectionMomentum::Adaptive,
                    _ => ConnectionMomentum::Constant(0.6),
                },
                gamma_tilde: 0.9,
                ..MomentumConfig::default()
            },
            vocab_size: 5,
            max_len: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn parameter_count_by_hand() {
        // tok 11·16 + pos 32·16 + 2 × (ln 32 + qkv 768 + ln 32 + w1 1024 + b1 64 + w2 1024 + b2 16)
        // + final ln 32 + w_out 176 + b_out 11
        let cfg = ModelConfig::default();
        assert_eq!(cfg.param_count(), 6827);
        let m = Model::build(&cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(m.param_count(), 6827);
    }

    #[test]
    fn config_errors() {
        let bad = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(matches!(Model::build(&bad, &mut Rng::new(0)), Err(Error::Config(_))));
        let mut bad = ModelConfig { attention_kind: AttentionKind::MomentumWithConnection, ..ModelConfig::default() };
        bad.momentum.beta_tilde = ConnectionMomentum::Adaptive;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn linear_equals_momentum_off() {
        let cfg = small(AttentionKind::Linear);
        let m = Model::build(&cfg, &mut Rng::new(3)).unwrap();
        let mut mc = cfg.clone();
        mc.attention_kind = AttentionKind::Momentum;
        mc.momentum.beta = 0.0;
        mc.momentum.gamma = 1.0;
        let mm = Model::build(&mc, &mut Rng::new(3)).unwrap();
        let tokens = [0, 3, 1, 4, 0, 3, 1, 4, 0, 2, 2, 1, 0, 2, 2, 1];
        let a = m.logits(&tokens, 2, 8).unwrap();
        let b = mm.logits(&tokens, 2, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_token_single_layer() {
        for kind in [AttentionKind::Softmax, AttentionKind::Linear, AttentionKind::Momentum] {
            let cfg = ModelConfig { n_layers: 1, n_heads: 1, ..small(kind) };
            let m = Model::build(&cfg, &mut Rng::new(5)).unwrap();
            let fwd = m.forward(&[2], 1, 1, &ForwardOptions::default()).unwrap();
            let p = m.params();
            // Hand evaluation of f(v + x) with x = e + p_0, v = W_v LN(x).
            let x: Vec<f64> = p[0].row(2).iter().zip(p[1].row(0)).map(|(a, b)| a + b).collect();
            let ln = |x: &[f64], g: &DenseMatrix, b: &DenseMatrix| -> Vec<f64> {
                let n = x.len() as f64;
                let mu = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / n;
                x.iter().enumerate().map(|(i, e)| (e - mu) / (var + LAYER_NORM_EPS).sqrt() * g.data()[i] + b.data()[i]).collect()
            };
            let mv = |w: &DenseMatrix, x: &[f64]| -> Vec<f64> { (0..w.rows()).map(|r| crate::numerics::dot(w.row(r), x)).collect() };
            let xn = ln(&x, &p[2], &p[3]);
            let mut v = mv(&p[6], &xn);
            if kind == AttentionKind::Momentum {
                // γ with a single token, up to the eps in the denominator
                v.iter_mut().for_each(|e| *e *= cfg.momentum.gamma);
            }
            let u: Vec<f64> = v.iter().zip(&x).map(|(a, b)| a + b).collect();
            let un = ln(&u, &p[7], &p[8]);
            let h: Vec<f64> = mv(&p[9], &un).iter().zip(p[10].data()).map(|(a, b)| Activation::Gelu.eval(a + b)).collect();
            let out: Vec<f64> = mv(&p[11], &h).iter().zip(p[12].data()).zip(&u).map(|((a, b), c)| a + b + c).collect();
            let got = fwd.tape.value(fwd.layer_outputs[0]).row(0).to_vec();
            assert!(max_abs_diff(&got, &out) < 1e-5, "{kind}: {got:?} vs {out:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kind() {
        for (i, kind) in AttentionKind::ALL.into_iter().enumerate() {
            let cfg = small(kind);
            let m = Model::build(&cfg, &mut Rng::new(20 + i as u64)).unwrap();
            let tokens = [0, 1, 3, 4, 0, 1, 3, 4, 0, 2, 4, 4, 0, 2, 4, 4];
            let targets: Vec<Option<usize>> = (0..16).map(|r| if r % 8 == 7 { None } else { Some(tokens[r + 1]) }).collect();
            let base = m.forward(&tokens, 2, 8, &ForwardOptions::default()).unwrap();
            let opts = ForwardOptions { frozen_connection: Some(base.connection.clone()) };
            if kind == AttentionKind::AdaptiveMomentum {
                assert!(base.connection[1].iter().any(|&c| c > 0.0 && c < 0.999));
            }
            let report = grad_check(
                |ps| {
                    let mm = m.with_params(ps.to_vec())?;
                    let (l, g, _) = mm.loss_and_grads(&tokens, &targets, 2, 8, &opts)?;
                    Ok((l, g))
                },
                m.params(),
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{kind}: {:?}", report.errors);
        }
    }

    #[test]
    fn causal_outputs_ignore_future_tokens() {
        for kind in AttentionKind::ALL {
            let m = Model::build(&small(kind), &mut Rng::new(9)).unwrap();
            let a = [0, 1, 2, 3, 4, 1, 2, 3];
            let base = m.logits(&a, 1, 8).unwrap();
            for j in 1..8 {
                let mut b = a;
                b[j] = (b[j] + 1) % 5;
                let pert = m.logits(&b, 1, 8).unwrap();
                for i in 0..j {
                    assert_eq!(base.row(i), pert.row(i), "{kind}: token {j} leaked into {i}");
                }
            }
        }
    }
}
