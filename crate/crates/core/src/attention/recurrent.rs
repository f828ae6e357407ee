use super::linear::map_into;
use super::{accumulate, check_attention_momentum, readout, MomentumConfig};
use crate::error::{dim_err, Result};
use crate::feature_maps::FeatureMap;
use crate::numerics::{Matrix, Real};

/// Recurrent attention state after `index` tokens: the value summary `s`
/// (`D×D_v`), the key sum `z` (`D`) and the momentum `m` (`D×D_v`).
///
/// Memory is fixed by `(D, D_v)`; it does not grow with sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T = f64> {
    pub s: Matrix<T>,
    pub z: Vec<T>,
    pub m: Matrix<T>,
    pub index: usize,
}

impl<T: Real> RecurrentState<T> {
    /// The all-zero state `s_0 = 0, z_0 = 0, m_0 = 0`.
    pub fn new(key_dim: usize, value_dim: usize) -> Self {
        Self {
            s: Matrix::zeros(key_dim, value_dim),
            z: vec![T::zero(); key_dim],
            m: Matrix::zeros(key_dim, value_dim),
            index: 0,
        }
    }

    pub fn key_dim(&self) -> usize {
        self.z.len()
    }

    pub fn value_dim(&self) -> usize {
        self.s.cols()
    }

    /// Number of scalars held, `2·D·D_v + D`.
    pub fn aux_elements(&self) -> usize {
        2 * self.s.rows() * self.s.cols() + self.z.len()
    }

    fn check(&self, q: &[T], k: &[T], v: &[T]) -> Result<()> {
        if q.len() != self.key_dim() || k.len() != self.key_dim() || v.len() != self.value_dim() {
            return dim_err(format!(
                "step inputs q:{} k:{} v:{} do not fit a ({}x{}) state",
                q.len(),
                k.len(),
                v.len(),
                self.key_dim(),
                self.value_dim()
            ));
        }
        Ok(())
    }

    /// `s_i = s_{i−1} + φ(k_i)v_iᵀ`, `z_i = z_{i−1} + φ(k_i)`, then read out.
    pub fn step_linear(&mut self, q: &[T], k: &[T], v: &[T], fm: FeatureMap, eps: T) -> Result<Vec<T>> {
        self.check(q, k, v)?;
        let phi_k = fm.apply_slice(k);
        accumulate(self.s.data_mut(), &mut self.z, &phi_k, v);
        self.index += 1;
        let mut phi_q = vec![T::zero(); q.len()];
        map_into(fm, q, &mut phi_q);
        let mut out = vec![T::zero(); v.len()];
        readout(&phi_q, self.s.data(), &self.z, T::one(), eps, &mut out)?;
        Ok(out)
    }

    /// Heavy-ball update of the value summary:
    /// `m_i = β m_{i−1} − φ(k_i)v_iᵀ`, `s_i = s_{i−1} − γ m_i`,
    /// `z_i = z_{i−1} + φ(k_i)`, then read out.
    pub fn step_momentum(
        &mut self,
        q: &[T],
        k: &[T],
        v: &[T],
        cfg: &MomentumConfig,
        fm: FeatureMap,
        eps: T,
    ) -> Result<Vec<T>> {
        self.check(q, k, v)?;
        check_attention_momentum(cfg.beta, cfg.gamma)?;
        let beta = T::from_f64(cfg.beta);
        let gamma = T::from_f64(cfg.gamma);
        let phi_k = fm.apply_slice(k);
        let dv = v.len();
        for (d, &pk) in phi_k.iter().enumerate() {
            self.z[d] = self.z[d] + pk;
            let row = d * dv..(d + 1) * dv;
            let m = &mut self.m.data_mut()[row.clone()];
            for (mc, &vc) in m.iter_mut().zip(v) {
                *mc = beta * *mc - pk * vc;
            }
            let m = &self.m.data()[row.clone()];
            for (sc, &mc) in self.s.data_mut()[row].iter_mut().zip(m) {
                *sc = *sc - gamma * mc;
            }
        }
        self.index += 1;
        let mut phi_q = vec![T::zero(); q.len()];
        map_into(fm, q, &mut phi_q);
        let mut out = vec![T::zero(); dv];
        readout(&phi_q, self.s.data(), &self.z, T::one(), eps, &mut out)?;
        Ok(out)
    }
}

/// One step of the causal linear attention recurrence.
pub fn causal_linear_rnn_step<T: Real>(
    mut state: RecurrentState<T>,
    q: &[T],
    k: &[T],
    v: &[T],
    fm: FeatureMap,
    eps: T,
) -> Result<(RecurrentState<T>, Vec<T>)> {
    let out = state.step_linear(q, k, v, fm, eps)?;
    Ok((state, out))
}

/// One step of the causal momentum attention recurrence.
pub fn causal_momentum_rnn_step<T: Real>(
    mut state: RecurrentState<T>,
    q: &[T],
    k: &[T],
    v: &[T],
    cfg: &MomentumConfig,
    fm: FeatureMap,
    eps: T,
) -> Result<(RecurrentState<T>, Vec<T>)> {
    let out = state.step_momentum(q, k, v, cfg, fm, eps)?;
    Ok((state, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::causal_linear_attention;
    use crate::error::Error;
    use crate::numerics::{max_abs_diff, Rng};

    #[test]
    fn first_linear_step() {
        let mut rng = Rng::new(20);
        let (q, k, v) = (rng.normal_vec(3, 1.0), rng.normal_vec(3, 1.0), rng.normal_vec(2, 1.0));
        let fm = FeatureMap::EluPlusOne;
        let (state, out) = causal_linear_rnn_step(RecurrentState::new(3, 2), &q, &k, &v, fm, 0.0).unwrap();
        let pk = fm.apply_slice(&k);
        for d in 0..3 {
            for c in 0..2 {
                assert!((state.s[(d, c)] - pk[d] * v[c]).abs() < 1e-15);
            }
        }
        assert!(max_abs_diff(&out, &v) < 1e-14);
        assert_eq!(state.index, 1);
    }

    #[test]
    fn two_scalar_linear_steps() {
        let fm = FeatureMap::Identity;
        let s0 = RecurrentState::new(1, 1);
        let (s1, _) = causal_linear_rnn_step(s0, &[1.0], &[1.0], &[3.0], fm, 0.0).unwrap();
        let (_, out) = causal_linear_rnn_step(s1, &[1.0], &[2.0], &[5.0], fm, 0.0).unwrap();
        assert!((out[0] - 13.0f64 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn streamed_steps_match_batch_form() {
        let mut rng = Rng::new(21);
        let n = 16;
        let q = rng.normal_batch(1, n, 3, 1.0);
        let k = rng.normal_batch(1, n, 3, 1.0);
        let v = rng.normal_batch(1, n, 2, 1.0);
        let fm = FeatureMap::EluPlusOne;
        let batch = causal_linear_attention(&q, &k, &v, fm, 1e-6).unwrap();
        let mut state = RecurrentState::new(3, 2);
        for i in 0..n {
            let out = state.step_linear(q.token(0, i), k.token(0, i), v.token(0, i), fm, 1e-6).unwrap();
            assert!(max_abs_diff(&out, batch.token(0, i)) <= 1e-12);
        }
    }

    #[test]
    fn momentum_off_equals_linear_step() {
        let mut rng = Rng::new(22);
        let fm = FeatureMap::EluPlusOne;
        let cfg = MomentumConfig::with_momentum(0.0, 1.0);
        let mut a = RecurrentState::new(2, 3);
        let mut b = RecurrentState::new(2, 3);
        for _ in 0..10 {
            let (q, k, v) = (rng.normal_vec(2, 1.0), rng.normal_vec(2, 1.0), rng.normal_vec(3, 1.0));
            let oa = a.step_momentum(&q, &k, &v, &cfg, fm, 1e-6).unwrap();
            let ob = b.step_linear(&q, &k, &v, fm, 1e-6).unwrap();
            assert!(max_abs_diff(&oa, &ob) <= 1e-12);
        }
    }

    #[test]
    fn scalar_momentum_hand_iteration() {
        // φ(k)vᵀ = 2 then 4 with β = 0.5, γ = 1.
        let cfg = MomentumConfig::with_momentum(0.5, 1.0);
        let fm = FeatureMap::Identity;
        let mut st = RecurrentState::new(1, 1);
        st.step_momentum(&[1.0], &[1.0], &[2.0], &cfg, fm, 0.0).unwrap();
        assert_eq!((st.m[(0, 0)], st.s[(0, 0)]), (-2.0, 2.0));
        st.step_momentum(&[1.0], &[1.0], &[4.0], &cfg, fm, 0.0).unwrap();
        assert_eq!((st.m[(0, 0)], st.s[(0, 0)]), (-5.0, 7.0));
    }

    #[test]
    fn state_matches_closed_form() {
        let mut rng = Rng::new(23);
        let fm = FeatureMap::EluPlusOne;
        let (d, dv, n) = (3, 2, 20);
        let keys = rng.normal_batch(1, n, d, 1.0);
        let vals = rng.normal_batch(1, n, dv, 1.0);
        for (beta, gamma) in [(0.1, 0.6), (0.5, 1.0), (0.9, 0.5)] {
            let cfg = MomentumConfig::with_momentum(beta, gamma);
            let mut st = RecurrentState::new(d, dv);
            for i in 0..n {
                st.step_momentum(&vec![0.0; d], keys.token(0, i), vals.token(0, i), &cfg, fm, 1e-6).unwrap();
                for r in 0..d {
                    for c in 0..dv {
                        let closed: f64 = (0..=i)
                            .map(|j| {
                                let coeff = (1.0 - f64::powi(beta, (i - j + 1) as i32)) / (1.0 - beta);
                                coeff * fm.eval(keys.token(0, j)[r]) * vals.token(0, j)[c]
                            })
                            .sum::<f64>()
                            * gamma;
                        assert!((st.s[(r, c)] - closed).abs() <= 1e-11 * closed.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn state_size_is_length_independent() {
        let mut st: RecurrentState = RecurrentState::new(4, 5);
        let before = st.aux_elements();
        let cfg = MomentumConfig::with_momentum(0.3, 1.0);
        for _ in 0..100 {
            st.step_momentum(&[0.1; 4], &[0.2; 4], &[0.3; 5], &cfg, FeatureMap::EluPlusOne, 1e-6).unwrap();
        }
        assert_eq!(st.aux_elements(), before);
        assert_eq!(before, 2 * 4 * 5 + 4);
    }

    #[test]
    fn errors() {
        let st = RecurrentState::new(2, 2);
        let bad = MomentumConfig::with_momentum(1.5, 1.0);
        assert!(matches!(
            causal_momentum_rnn_step(st.clone(), &[0.0; 2], &[0.0; 2], &[0.0; 2], &bad, FeatureMap::EluPlusOne, 1e-6),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            causal_linear_rnn_step(st, &[0.0; 3], &[0.0; 2], &[0.0; 2], FeatureMap::EluPlusOne, 1e-6),
            Err(Error::Dimension(_))
        ));
    }
}
