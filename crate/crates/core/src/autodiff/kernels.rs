//! Backward passes for the attention composites, one sequence at a time.
//!
//! All buffers are row-major: `q`, `k` are `n×d`, `v` and `g` are `n×dv`.
//! The linear kinds take `q`, `k` already feature-mapped.

use crate::error::Result;
use crate::numerics::dot;

pub(crate) struct AttentionGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn softmax_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    n: usize,
    d: usize,
    dv: usize,
    causal: bool,
) -> AttentionGrads {
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = AttentionGrads {
        dq: vec![0.0; n * d],
        dk: vec![0.0; n * d],
        dv: vec![0.0; n * dv],
    };
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for i in 0..n {
        let visible = if causal { i + 1 } else { n };
        let qi = &q[i * d..(i + 1) * d];
        let gi = &g[i * dv..(i + 1) * dv];
        let mut max = f64::NEG_INFINITY;
        for j in 0..visible {
            p[j] = dot(qi, &k[j * d..(j + 1) * d]) * scale;
            max = max.max(p[j]);
        }
        let mut total = 0.0;
        for pj in &mut p[..visible] {
            *pj = (*pj - max).exp();
            total += *pj;
        }
        let mut mean = 0.0;
        for j in 0..visible {
            p[j] /= total;
            dp[j] = dot(gi, &v[j * dv..(j + 1) * dv]);
            mean += p[j] * dp[j];
        }
        for j in 0..visible {
            let ds = p[j] * (dp[j] - mean) * scale;
            for c in 0..d {
                out.dq[i * d + c] += ds * k[j * d + c];
                out.dk[j * d + c] += ds * qi[c];
            }
            for c in 0..dv {
                out.dv[j * dv + c] += p[j] * gi[c];
            }
        }
    }
    out
}

/// Reverse pass for momentum attention (linear attention is `β = 0, γ = 1`).
///
/// Forward: `W_i = Σ_{j≤i} c_{i−j} k_j v_jᵀ` with `c_t = (1−β^{t+1})/(1−β)`,
/// `z_i = Σ_{j≤i} k_j`, `out_i = γ W_iᵀq_i / (q_i·z_i + eps)`. The first pass
/// replays the running sums to get `dq` and the per-row readout adjoints;
/// the second runs right to left with the mirrored geometric sum, so memory
/// stays `O(d·dv)` beyond the `O(n)` row adjoints.
#[allow(clippy::too_many_arguments)]
pub(crate) fn momentum_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    n: usize,
    d: usize,
    dv: usize,
    beta: f64,
    gamma: f64,
    eps: f64,
    causal: bool,
) -> Result<AttentionGrads> {
    let inv = 1.0 / (1.0 - beta);
    let mut plain = vec![0.0; d * dv];
    let mut geo = vec![0.0; d * dv];
    let mut w = vec![0.0; d * dv];
    let mut z = vec![0.0; d];
    let mut dnum = vec![0.0; n * dv];
    let mut dden = vec![0.0; n];
    let mut out = AttentionGrads {
        dq: vec![0.0; n * d],
        dk: vec![0.0; n * d],
        dv: vec![0.0; n * dv],
    };

    let push = |j: usize, plain: &mut [f64], geo: &mut [f64], z: &mut [f64]| {
        for a in 0..d {
            let ka = k[j * d + a];
            z[a] += ka;
            for c in 0..dv {
                let u = ka * v[j * dv + c];
                plain[a * dv + c] += u;
                geo[a * dv + c] = beta * (geo[a * dv + c] + u);
            }
        }
    };
    let refresh = |w: &mut [f64], plain: &[f64], geo: &[f64]| {
        for ((wi, p), gg) in w.iter_mut().zip(plain).zip(geo) {
            *wi = (p - gg) * inv;
        }
    };

    if !causal {
        for j in 0..n {
            push(j, &mut plain, &mut geo, &mut z);
        }
        refresh(&mut w, &plain, &geo);
    }
    let mut num = vec![0.0; dv];
    for i in 0..n {
        if causal {
            push(i, &mut plain, &mut geo, &mut z);
            refresh(&mut w, &plain, &geo);
        }
        let qi = &q[i * d..(i + 1) * d];
        num.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..d {
            for c in 0..dv {
                num[c] += qi[a] * w[a * dv + c];
            }
        }
        let den = dot(qi, &z) + eps;
        if !(den > 0.0) || !den.is_finite() {
            return Err(crate::Error::Numerical(format!(
                "attention denominator {den} is not positive"
            )));
        }
        let gi = &g[i * dv..(i + 1) * dv];
        let mut g_dot_out = 0.0;
        for c in 0..dv {
            dnum[i * dv + c] = gamma * gi[c] / den;
            g_dot_out += gi[c] * gamma * num[c] / den;
        }
        dden[i] = -g_dot_out / den;
        for a in 0..d {
            let row = &w[a * dv..(a + 1) * dv];
            out.dq[i * d + a] = dot(row, &dnum[i * dv..(i + 1) * dv]) + dden[i] * z[a];
        }
    }

    let mut r = vec![0.0; d * dv];
    let mut rg = vec![0.0; d * dv];
    let mut du = vec![0.0; d * dv];
    let mut zacc = vec![0.0; d];
    let add_row = |i: usize, r: &mut [f64], zacc: &mut [f64]| {
        for a in 0..d {
            let qa = q[i * d + a];
            zacc[a] += dden[i] * qa;
            for c in 0..dv {
                r[a * dv + c] += qa * dnum[i * dv + c];
            }
        }
    };
    if !causal {
        for i in 0..n {
            add_row(i, &mut r, &mut zacc);
        }
    }
    for j in (0..n).rev() {
        if causal {
            for a in 0..d {
                let qa = q[j * d + a];
                zacc[a] += dden[j] * qa;
                for c in 0..dv {
                    let dw = qa * dnum[j * dv + c];
                    r[a * dv + c] += dw;
                    rg[a * dv + c] = beta * (rg[a * dv + c] + dw);
                }
            }
            for ((x, a), b) in du.iter_mut().zip(&r).zip(&rg) {
                *x = (a - b) * inv;
            }
        } else {
            let c = (1.0 - beta.powi((n - j) as i32)) * inv;
            for (x, a) in du.iter_mut().zip(&r) {
                *x = c * a;
            }
        }
        let vj = &v[j * dv..(j + 1) * dv];
        for a in 0..d {
            out.dk[j * d + a] = dot(&du[a * dv..(a + 1) * dv], vj) + zacc[a];
        }
        for c in 0..dv {
            let mut acc = 0.0;
            for a in 0..d {
                acc += du[a * dv + c] * k[j * d + a];
            }
            out.dv[j * dv + c] = acc;
        }
    }
    Ok(out)
}
