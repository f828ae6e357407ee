use std::time::Instant;

use serde::Serialize;

use crate::attention::{
    causal_linear_attention, causal_momentum_attention, causal_momentum_rnn_step, linear_attention,
    momentum_attention, softmax_attention, MomentumConfig, RecurrentState,
};
use crate::error::{Error, Result};
use crate::feature_maps::FeatureMap;
use crate::numerics::{Real, Rng, SequenceBatch};

/// Attention implementations the benchmark can time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Softmax,
    Linear,
    CausalLinear,
    Momentum,
    CausalMomentum,
    /// Token-by-token recurrent stepping.
    MomentumRnn,
}

impl BenchKind {
    pub const ALL: [BenchKind; 6] = [
        BenchKind::Softmax,
        BenchKind::Linear,
        BenchKind::CausalLinear,
        BenchKind::Momentum,
        BenchKind::CausalMomentum,
        BenchKind::MomentumRnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Softmax => "softmax",
            BenchKind::Linear => "linear",
            BenchKind::CausalLinear => "causal_linear",
            BenchKind::Momentum => "momentum",
            BenchKind::CausalMomentum => "causal_momentum",
            BenchKind::MomentumRnn => "momentum_rnn",
        }
    }

    /// Auxiliary elements held beyond inputs and outputs, per sequence.
    pub fn aux_elements(self, n: usize, d: usize, dv: usize) -> usize {
        match self {
            // one row of scores
            BenchKind::Softmax => n,
            // summary, key sum, mapped feature buffer
            BenchKind::Linear | BenchKind::CausalLinear => d * dv + 2 * d,
            // plain and geometric sums, materialised summary, key sum, feature buffer
            BenchKind::Momentum | BenchKind::CausalMomentum => 3 * d * dv + 2 * d,
            // s, m, z
            BenchKind::MomentumRnn => RecurrentState::<f64>::new(d, dv).aux_elements(),
        }
    }
}

impl std::fmt::Display for BenchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BenchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown bench kind `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub kinds: Vec<BenchKind>,
    pub lengths: Vec<usize>,
    pub reps: usize,
    pub dim: usize,
    pub seed: u64,
    pub momentum: MomentumConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kinds: BenchKind::ALL.to_vec(),
            lengths: vec![256, 512, 1024, 2048, 4096, 8192],
            reps: 3,
            dim: 32,
            seed: 0,
            momentum: MomentumConfig::with_momentum(0.1, 0.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: BenchKind,
    pub n: usize,
    pub median_s: f64,
    pub aux_elements: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `ln(time)` against `ln(N)` per kind.
    pub slopes: Vec<(BenchKind, f64)>,
}

impl BenchReport {
    pub fn slope(&self, kind: BenchKind) -> Option<f64> {
        self.slopes.iter().find(|(k, _)| *k == kind).map(|(_, s)| *s)
    }

    /// `kind,n,median_s,aux_elements`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,n,median_s,aux_elements\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:e},{}\n", r.kind, r.n, r.median_s, r.aux_elements));
        }
        s
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_once<T: Real>(kind: BenchKind, q: &SequenceBatch<T>, k: &SequenceBatch<T>, v: &SequenceBatch<T>, cfg: &MomentumConfig) -> Result<T> {
    let fm = FeatureMap::EluPlusOne;
    let eps = T::from_f64(cfg.eps);
    let out = match kind {
        BenchKind::Softmax => softmax_attention(q, k, v, true)?,
        BenchKind::Linear => linear_attention(q, k, v, fm, eps)?,
        BenchKind::CausalLinear => causal_linear_attention(q, k, v, fm, eps)?,
        BenchKind::Momentum => momentum_attention(q, k, v, cfg, fm, eps)?,
        BenchKind::CausalMomentum => causal_momentum_attention(q, k, v, cfg, fm, eps)?,
        BenchKind::MomentumRnn => {
            let mut state = RecurrentState::new(q.dim(), v.dim());
            let mut acc = T::zero();
            for i in 0..q.len() {
                let (next, o) = causal_momentum_rnn_step(state, q.token(0, i), k.token(0, i), v.token(0, i), cfg, fm, eps)?;
                state = next;
                acc = acc + o[0];
            }
            return Ok(acc);
        }
    };
    Ok(out.data()[0])
}

fn to_precision<T: Real>(b: &SequenceBatch) -> SequenceBatch<T> {
    let (batch, len, dim) = b.shape();
    SequenceBatch::from_vec(batch, len, dim, b.data().iter().map(|&x| T::from_f64(x)).collect())
        .expect("same shape")
}

/// Times each kind at each length (batch 1, `D = D_v = dim`), keeping the
/// median of `reps` repetitions, then fits the log-log slope per kind.
pub fn bench_attention<T: Real>(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.lengths.len() < 4 || cfg.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bench needs at least 4 strictly ascending lengths".into()));
    }
    if cfg.reps == 0 || cfg.dim == 0 || cfg.kinds.is_empty() {
        return Err(Error::Config("bench needs reps, dim and at least one kind".into()));
    }
    cfg.momentum.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.lengths {
        let q = to_precision::<T>(&rng.normal_batch(1, n, cfg.dim, 1.0));
        let k = to_precision::<T>(&rng.normal_batch(1, n, cfg.dim, 1.0));
        let v = to_precision::<T>(&rng.normal_batch(1, n, cfg.dim, 1.0));
        for &kind in &cfg.kinds {
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let t = Instant::now();
                let sink = run_once(kind, &q, &k, &v, &cfg.momentum)?;
                times.push(t.elapsed().as_secs_f64());
                std::hint::black_box(sink);
            }
            rows.push(BenchRow {
                kind,
                n,
                median_s: median(times),
                aux_elements: kind.aux_elements(n, cfg.dim, cfg.dim),
            });
            log::debug!("bench {kind} N={n} done");
        }
    }
    let xs: Vec<f64> = cfg.lengths.iter().map(|&n| n as f64).collect();
    let slopes = cfg
        .kinds
        .iter()
        .map(|&kind| {
            let ys: Vec<f64> = rows.iter().filter(|r| r.kind == kind).map(|r| r.median_s.max(1e-9)).collect();
            (kind, log_log_slope(&xs, &ys))
        })
        .collect();
    Ok(BenchReport { rows, slopes })
}
