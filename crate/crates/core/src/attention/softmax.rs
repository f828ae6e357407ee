use super::check_qkv;
use crate::error::Result;
use crate::numerics::{dot, Real, SequenceBatch};

/// `softmax(QKᵀ/√D) V`, optionally causally masked.
///
/// Scores are produced one query row at a time with max-subtraction; masked
/// positions (`j > i`) are excluded outright, which is the same as adding
/// `−∞` before the softmax. Time is `O(N²)`; the only auxiliary buffer is one
/// row of `N` scores.
pub fn softmax_attention<T: Real>(
    q: &SequenceBatch<T>,
    k: &SequenceBatch<T>,
    v: &SequenceBatch<T>,
    causal: bool,
) -> Result<SequenceBatch<T>> {
    check_qkv(q, k, v)?;
    let (batch, n, d) = q.shape();
    let dv = v.dim();
    let inv_sqrt_d = T::one() / T::from_f64(d as f64).sqrt();
    let mut out = SequenceBatch::zeros(batch, n, dv);
    let mut scores = vec![T::zero(); n];
    for b in 0..batch {
        for i in 0..n {
            let visible = if causal { i + 1 } else { n };
            let qi = q.token(b, i);
            let mut max = T::neg_infinity();
            for (j, s) in scores[..visible].iter_mut().enumerate() {
                *s = dot(qi, k.token(b, j)) * inv_sqrt_d;
                max = max.max(*s);
            }
            let mut total = T::zero();
            for s in scores[..visible].iter_mut() {
                *s = (*s - max).exp();
                total = total + *s;
            }
            let oi = out.token_mut(b, i);
            for (j, &w) in scores[..visible].iter().enumerate() {
                let weight = w / total;
                for (o, &vj) in oi.iter_mut().zip(v.token(b, j)) {
                    *o = *o + weight * vj;
                }
            }
        }
    }
    Ok(out)
}
