use super::{accumulate, check_qkv, readout};
use crate::error::Result;
use crate::feature_maps::FeatureMap;
use crate::numerics::{Real, SequenceBatch};

/// Non-causal linear attention `φ(Q)(φ(K)ᵀV) / (φ(Q)φ(K)ᵀ𝟙 + eps)`.
///
/// The key–value summary is accumulated once per sequence, so time is
/// `O(N·D·D_v)` and the auxiliary state is `D·D_v + D` regardless of `N`.
pub fn linear_attention<T: Real>(
    q: &SequenceBatch<T>,
    k: &SequenceBatch<T>,
    v: &SequenceBatch<T>,
    fm: FeatureMap,
    eps: T,
) -> Result<SequenceBatch<T>> {
    check_qkv(q, k, v)?;
    let (batch, n, d) = q.shape();
    let dv = v.dim();
    let mut out = SequenceBatch::zeros(batch, n, dv);
    let mut summary = vec![T::zero(); d * dv];
    let mut z = vec![T::zero(); d];
    let mut phi = vec![T::zero(); d];
    for b in 0..batch {
        summary.iter_mut().for_each(|x| *x = T::zero());
        z.iter_mut().for_each(|x| *x = T::zero());
        for j in 0..n {
            map_into(fm, k.token(b, j), &mut phi);
            accumulate(&mut summary, &mut z, &phi, v.token(b, j));
        }
        for i in 0..n {
            map_into(fm, q.token(b, i), &mut phi);
            readout(&phi, &summary, &z, T::one(), eps, out.token_mut(b, i))?;
        }
    }
    Ok(out)
}

/// Causal linear attention: position `i` reads the prefix sums
/// `s_i = Σ_{j≤i} φ(k_j)v_jᵀ`, `z_i = Σ_{j≤i} φ(k_j)` in one left-to-right pass.
pub fn causal_linear_attention<T: Real>(
    q: &SequenceBatch<T>,
    k: &SequenceBatch<T>,
    v: &SequenceBatch<T>,
    fm: FeatureMap,
    eps: T,
) -> Result<SequenceBatch<T>> {
    check_qkv(q, k, v)?;
    let (batch, n, d) = q.shape();
    let dv = v.dim();
    let mut out = SequenceBatch::zeros(batch, n, dv);
    let mut s = vec![T::zero(); d * dv];
    let mut z = vec![T::zero(); d];
    let mut phi = vec![T::zero(); d];
    for b in 0..batch {
        s.iter_mut().for_each(|x| *x = T::zero());
        z.iter_mut().for_each(|x| *x = T::zero());
        for i in 0..n {
            map_into(fm, k.token(b, i), &mut phi);
            accumulate(&mut s, &mut z, &phi, v.token(b, i));
            map_into(fm, q.token(b, i), &mut phi);
            readout(&phi, &s, &z, T::one(), eps, out.token_mut(b, i))?;
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn map_into<T: Real>(fm: FeatureMap, x: &[T], out: &mut [T]) {
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = fm.eval(xi);
    }
}
