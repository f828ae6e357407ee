use super::linear::map_into;
use super::{check_attention_momentum, check_qkv, readout, MomentumConfig};
use crate::error::Result;
use crate::feature_maps::FeatureMap;
use crate::numerics::{Real, SequenceBatch};

/// Reweighting coefficient `(1 − β^span)/(1 − β)` applied to a key–value
/// outer product `span = i − j + 1` positions back. Equals 1 at `span = 1`
/// and grows towards `1/(1−β)` for older tokens.
pub fn momentum_weight(beta: f64, span: u32) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    (1.0 - beta.powi(span as i32)) / (1.0 - beta)
}

/// Running sums that produce the reweighted summary without `O(N²)` work.
///
/// `plain = Σ_j u_j` and `geometric = Σ_j β^{i−j+1} u_j` (updated as
/// `β(geometric + u_i)`), hence
/// `Σ_j (1−β^{i−j+1})/(1−β) u_j = (plain − geometric)/(1 − β)`.
struct ReweightedSums<T> {
    beta: T,
    plain: Vec<T>,
    geometric: Vec<T>,
    key_sum: Vec<T>,
    summary: Vec<T>,
}

impl<T: Real> ReweightedSums<T> {
    fn new(beta: T, d: usize, dv: usize) -> Self {
        Self {
            beta,
            plain: vec![T::zero(); d * dv],
            geometric: vec![T::zero(); d * dv],
            key_sum: vec![T::zero(); d],
            summary: vec![T::zero(); d * dv],
        }
    }

    fn reset(&mut self) {
        for buf in [&mut self.plain, &mut self.geometric, &mut self.key_sum] {
            buf.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    fn push(&mut self, phi_k: &[T], v: &[T]) {
        let dv = v.len();
        for (d, &pk) in phi_k.iter().enumerate() {
            self.key_sum[d] = self.key_sum[d] + pk;
            let row = d * dv..(d + 1) * dv;
            for ((s, g), &vc) in self.plain[row.clone()]
                .iter_mut()
                .zip(&mut self.geometric[row])
                .zip(v)
            {
                let u = pk * vc;
                *s = *s + u;
                *g = self.beta * (*g + u);
            }
        }
    }

    fn refresh_summary(&mut self) {
        let inv = T::one() / (T::one() - self.beta);
        for ((w, &s), &g) in self.summary.iter_mut().zip(&self.plain).zip(&self.geometric) {
            *w = (s - g) * inv;
        }
    }
}

/// Causal momentum attention in its unrolled, trainable form:
/// `v̂_i = γ φ(q_i)ᵀ Σ_{j≤i} (1−β^{i−j+1})/(1−β) φ(k_j)v_jᵀ / (φ(q_i)ᵀz_i + eps)`.
///
/// Equivalent to streaming [`super::causal_momentum_rnn_step`] over the
/// sequence. One pass, `O(N)` time, auxiliary state `2·D·D_v + D` (plus the
/// materialised summary).
pub fn causal_momentum_attention<T: Real>(
    q: &SequenceBatch<T>,
    k: &SequenceBatch<T>,
    v: &SequenceBatch<T>,
    cfg: &MomentumConfig,
    fm: FeatureMap,
    eps: T,
) -> Result<SequenceBatch<T>> {
    check_qkv(q, k, v)?;
    check_attention_momentum(cfg.beta, cfg.gamma)?;
    let (batch, n, d) = q.shape();
    let dv = v.dim();
    let gamma = T::from_f64(cfg.gamma);
    let mut sums = ReweightedSums::new(T::from_f64(cfg.beta), d, dv);
    let mut phi = vec![T::zero(); d];
    let mut out = SequenceBatch::zeros(batch, n, dv);
    for b in 0..batch {
        sums.reset();
        for i in 0..n {
            map_into(fm, k.token(b, i), &mut phi);
            sums.push(&phi, v.token(b, i));
            sums.refresh_summary();
            map_into(fm, q.token(b, i), &mut phi);
            readout(&phi, &sums.summary, &sums.key_sum, gamma, eps, out.token_mut(b, i))?;
        }
    }
    Ok(out)
}

/// Non-causal momentum attention: every position reads the same summary
/// `Σ_{j≤N} (1−β^{N−j+1})/(1−β) φ(k_j)v_jᵀ` and the full key sum.
pub fn momentum_attention<T: Real>(
    q: &SequenceBatch<T>,
    k: &SequenceBatch<T>,
    v: &SequenceBatch<T>,
    cfg: &MomentumConfig,
    fm: FeatureMap,
    eps: T,
) -> Result<SequenceBatch<T>> {
    check_qkv(q, k, v)?;
    check_attention_momentum(cfg.beta, cfg.gamma)?;
    let (batch, n, d) = q.shape();
    let dv = v.dim();
    let gamma = T::from_f64(cfg.gamma);
    let mut sums = ReweightedSums::new(T::from_f64(cfg.beta), d, dv);
    let mut phi = vec![T::zero(); d];
    let mut out = SequenceBatch::zeros(batch, n, dv);
    for b in 0..batch {
        sums.reset();
        for j in 0..n {
            map_into(fm, k.token(b, j), &mut phi);
            sums.push(&phi, v.token(b, j));
        }
        sums.refresh_summary();
        for i in 0..n {
            map_into(fm, q.token(b, i), &mut phi);
            readout(&phi, &sums.summary, &sums.key_sum, gamma, eps, out.token_mut(b, i))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{causal_linear_attention, causal_momentum_rnn_step, linear_attention, RecurrentState};
    use crate::error::Error;
    use crate::numerics::{max_abs_diff, Rng};
    use proptest::prelude::*;

    fn qkv(rng: &mut Rng, b: usize, n: usize, d: usize, dv: usize) -> (SequenceBatch, SequenceBatch, SequenceBatch) {
        (rng.normal_batch(b, n, d, 1.0), rng.normal_batch(b, n, d, 1.0), rng.normal_batch(b, n, dv, 1.0))
    }

    /// Direct double loop over the reweighted outer products.
    fn double_loop(q: &SequenceBatch, k: &SequenceBatch, v: &SequenceBatch, beta: f64, gamma: f64, fm: FeatureMap, eps: f64, causal: bool) -> SequenceBatch {
        let (batch, n, d) = q.shape();
        let mut out = SequenceBatch::zeros(batch, n, v.dim());
        for b in 0..batch {
            for i in 0..n {
                let last = if causal { i } else { n - 1 };
                let pq = fm.apply_slice(q.token(b, i));
                let mut den = eps;
                for j in 0..=last {
                    let pk = fm.apply_slice(k.token(b, j));
                    den += (0..d).map(|t| pq[t] * pk[t]).sum::<f64>();
                }
                for c in 0..v.dim() {
                    let mut num = 0.0;
                    for j in 0..=last {
                        let pk = fm.apply_slice(k.token(b, j));
                        let kernel: f64 = (0..d).map(|t| pq[t] * pk[t]).sum();
                        let coeff = (1.0 - beta.powi((last - j + 1) as i32)) / (1.0 - beta);
                        num += coeff * kernel * v.token(b, j)[c];
                    }
                    out.token_mut(b, i)[c] = gamma * num / den;
                }
            }
        }
        out
    }

    #[test]
    fn weight_examples() {
        assert_eq!(momentum_weight(0.0, 7), 1.0);
        assert!((momentum_weight(0.5, 3) - 1.75).abs() < 1e-15);
        assert_eq!(momentum_weight(0.3, 1), 1.0);
    }

    proptest! {
        #[test]
        fn weight_strictly_increases_with_age(beta in 0.01f64..0.99, span in 1u32..200) {
            // Past this point the increment is below one ulp of the weight.
            prop_assume!(beta.powi(span as i32 + 1) > 1e-13);
            prop_assert!(momentum_weight(beta, span + 1) > momentum_weight(beta, span));
        }
    }

    #[test]
    fn momentum_off_reduces_to_linear() {
        let mut rng = Rng::new(10);
        let (q, k, v) = qkv(&mut rng, 2, 9, 3, 2);
        let cfg = MomentumConfig::with_momentum(0.0, 1.0);
        let fm = FeatureMap::EluPlusOne;
        let a = causal_momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
        let b = causal_linear_attention(&q, &k, &v, fm, 1e-6).unwrap();
        assert!(max_abs_diff(a.data(), b.data()) <= 1e-12);
        let a = momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
        let b = linear_attention(&q, &k, &v, fm, 1e-6).unwrap();
        assert!(max_abs_diff(a.data(), b.data()) <= 1e-12);
    }

    #[test]
    fn causal_matches_streamed_recurrence() {
        let mut rng = Rng::new(11);
        let (q, k, v) = qkv(&mut rng, 1, 12, 2, 2);
        let cfg = MomentumConfig::with_momentum(0.3, 0.7);
        let fm = FeatureMap::EluPlusOne;
        let batch = causal_momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
        let mut state = RecurrentState::new(2, 2);
        for i in 0..12 {
            let (next, out) = causal_momentum_rnn_step(state, q.token(0, i), k.token(0, i), v.token(0, i), &cfg, fm, 1e-6).unwrap();
            state = next;
            assert!(max_abs_diff(&out, batch.token(0, i)) <= 1e-10);
        }
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = Rng::new(12);
        let (q, k, v) = qkv(&mut rng, 1, 8, 2, 2);
        let fm = FeatureMap::EluPlusOne;
        for (beta, gamma) in [(0.5, 1.0), (0.9, 0.6), (0.1, 0.6)] {
            let cfg = MomentumConfig::with_momentum(beta, gamma);
            let nc = momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
            assert!(max_abs_diff(nc.data(), double_loop(&q, &k, &v, beta, gamma, fm, 1e-6, false).data()) <= 1e-12);
            let c = causal_momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
            assert!(max_abs_diff(c.data(), double_loop(&q, &k, &v, beta, gamma, fm, 1e-6, true).data()) <= 1e-12);
        }
    }

    #[test]
    fn single_token_scales_value_by_gamma() {
        let mut rng = Rng::new(13);
        let (q, k, v) = qkv(&mut rng, 1, 1, 3, 2);
        let cfg = MomentumConfig::with_momentum(0.5, 0.6);
        let out = momentum_attention(&q, &k, &v, &cfg, FeatureMap::EluPlusOne, 0.0).unwrap();
        for (o, x) in out.data().iter().zip(v.data()) {
            assert!((o - 0.6 * x).abs() < 1e-14);
        }
    }

    #[test]
    fn non_causal_rows_share_one_summary() {
        let mut rng = Rng::new(14);
        let (_, k, v) = qkv(&mut rng, 1, 7, 3, 2);
        let cfg = MomentumConfig::with_momentum(0.5, 1.0);
        let fm = FeatureMap::EluPlusOne;
        // Identical queries read identical rows.
        let row = rng.normal_vec(3, 1.0);
        let q = SequenceBatch::from_vec(1, 7, 3, row.repeat(7)).unwrap();
        let out = momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
        for i in 1..7 {
            assert!(max_abs_diff(out.token(0, i), out.token(0, 0)) <= 1e-12);
        }
        // Permuting queries permutes output rows.
        let q = rng.normal_batch(1, 7, 3, 1.0);
        let out = momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
        let mut rev = SequenceBatch::zeros(1, 7, 3);
        for i in 0..7 {
            rev.token_mut(0, i).copy_from_slice(q.token(0, 6 - i));
        }
        let out_rev = momentum_attention(&rev, &k, &v, &cfg, fm, 1e-6).unwrap();
        for i in 0..7 {
            assert!(max_abs_diff(out_rev.token(0, i), out.token(0, 6 - i)) <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_beta() {
        let mut rng = Rng::new(15);
        let (q, k, v) = qkv(&mut rng, 1, 3, 2, 2);
        let cfg = MomentumConfig::with_momentum(1.0, 1.0);
        let res = causal_momentum_attention(&q, &k, &v, &cfg, FeatureMap::EluPlusOne, 1e-6);
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn bounded_inputs_stay_finite() {
        let mut rng = Rng::new(16);
        let q = rng.uniform_batch(2, 64, 4, -10.0, 10.0);
        let k = rng.uniform_batch(2, 64, 4, -10.0, 10.0);
        let v = rng.uniform_batch(2, 64, 3, -10.0, 10.0);
        let cfg = MomentumConfig::with_momentum(0.9, 1.0);
        let fm = FeatureMap::EluPlusOne;
        assert!(causal_momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap().is_finite());
        assert!(momentum_attention(&q, &k, &v, &cfg, fm, 1e-6).unwrap().is_finite());
        assert!(linear_attention(&q, &k, &v, fm, 1e-6).unwrap().is_finite());
        assert!(causal_linear_attention(&q, &k, &v, fm, 1e-6).unwrap().is_finite());
    }
}
