use super::kernels::{momentum_backward, softmax_backward};
use crate::attention::{causal_linear_attention, causal_momentum_attention, linear_attention, momentum_attention, softmax_attention, MomentumConfig};
use crate::error::{Error, Result};
use crate::feature_maps::FeatureMap;
use crate::numerics::{DenseMatrix, SequenceBatch};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// Tanh approximation of GELU.
    Gelu,
    Feature(FeatureMap),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Feature(fm) => fm.eval(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Feature(fm) => fm.derivative(x),
        }
    }
}

/// Attention composites. Linear kinds expect already feature-mapped inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionKernel {
    Softmax { causal: bool },
    Linear { causal: bool, eps: f64 },
    /// `beta` and `gamma` are constants; no gradient flows into them.
    Momentum { causal: bool, beta: f64, gamma: f64, eps: f64 },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddBias { x: Var, b: Var },
    Map { x: Var, act: Activation },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: DenseMatrix, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { table: Var, idx: Vec<usize> },
    TileRows { x: Var },
    ScaleRows { x: Var, coeffs: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, kernel: AttentionKernel, batch: usize, len: usize },
    Sum(Var),
    HalfSqNorm(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: DenseMatrix, count: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Records dense operations in topological order for one reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`]. Every leaf has one, zero if unreached.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf; panics on a var from another tape.
    pub fn wrt(&self, v: Var) -> &DenseMatrix {
        self.get(v).expect("no gradient recorded for this var")
    }
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.shape() != (1, 1) {
            return shape_err(format!("expected a scalar, found {:?}", m.shape()));
        }
        Ok(m[(0, 0)])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `x wᵀ`: rows of `x` through a weight stored as `out × in`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = self.value(x).matmul_transposed(self.value(w))?;
        Ok(self.push(value, Op::Linear { x, w }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// Adds the `1 × cols` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xm, bm) = (self.value(x), self.value(b));
        if bm.rows() != 1 || bm.cols() != xm.cols() {
            return shape_err(format!("bias {:?} for input {:?}", bm.shape(), xm.shape()));
        }
        let mut value = xm.clone();
        for r in 0..value.rows() {
            for (o, bi) in value.row_mut(r).iter_mut().zip(bm.data()) {
                *o += bi;
            }
        }
        Ok(self.push(value, Op::AddBias { x, b }))
    }

    pub fn map(&mut self, x: Var, act: Activation) -> Var {
        let value = self.value(x).map(|e| act.eval(e));
        self.push(value, Op::Map { x, act })
    }

    /// Row-wise layer normalisation with learned `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        for p in [gain, bias] {
            if self.value(p).shape() != (1, cols) {
                return shape_err(format!("layer norm parameter {:?} for width {cols}", self.value(p).shape()));
            }
        }
        let mut xhat = DenseMatrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (h, e) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (e - mean) * is;
            }
            inv_std.push(is);
        }
        let (gm, bm) = (self.value(gain).data(), self.value(bias).data());
        let value = DenseMatrix::from_fn(rows, cols, |r, c| xhat[(r, c)] * gm[c] + bm[c]);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xm = self.value(x);
        if start >= end || end > xm.cols() {
            return shape_err(format!("column slice {start}..{end} of {:?}", xm.shape()));
        }
        let value = DenseMatrix::from_fn(xm.rows(), end - start, |r, c| xm[(r, start + c)]);
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return shape_err("concat parts differ in row count");
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Embedding lookup: row `i` of the output is row `idx[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tm = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= tm.rows()) {
            return shape_err(format!("row index {bad} out of range for {:?}", tm.shape()));
        }
        let value = DenseMatrix::from_fn(idx.len(), tm.cols(), |r, c| tm[(idx[r], c)]);
        Ok(self.push(value, Op::GatherRows { table, idx: idx.to_vec() }))
    }

    /// Stacks `times` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Var {
        let xm = self.value(x);
        let n = xm.rows();
        let value = DenseMatrix::from_fn(n * times, xm.cols(), |r, c| xm[(r % n, c)]);
        self.push(value, Op::TileRows { x })
    }

    /// Row `r` scaled by the constant `coeffs[r]` (no gradient into `coeffs`).
    pub fn scale_rows(&mut self, x: Var, coeffs: &[f64]) -> Result<Var> {
        let xm = self.value(x);
        if coeffs.len() != xm.rows() {
            return shape_err(format!("{} row coefficients for {:?}", coeffs.len(), xm.shape()));
        }
        let value = DenseMatrix::from_fn(xm.rows(), xm.cols(), |r, c| coeffs[r] * xm[(r, c)]);
        Ok(self.push(value, Op::ScaleRows { x, coeffs: coeffs.to_vec() }))
    }

    /// Attention over `batch` sequences of `len` tokens stacked as rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, kernel: AttentionKernel, batch: usize, len: usize) -> Result<Var> {
        let as_batch = |m: &DenseMatrix| SequenceBatch::from_matrix(m.clone(), batch, len);
        let (qb, kb, vb) = (as_batch(self.value(q))?, as_batch(self.value(k))?, as_batch(self.value(v))?);
        let id = FeatureMap::Identity;
        let out = match kernel {
            AttentionKernel::Softmax { causal } => softmax_attention(&qb, &kb, &vb, causal)?,
            AttentionKernel::Linear { causal: true, eps } => causal_linear_attention(&qb, &kb, &vb, id, eps)?,
            AttentionKernel::Linear { causal: false, eps } => linear_attention(&qb, &kb, &vb, id, eps)?,
            AttentionKernel::Momentum { causal, beta, gamma, eps } => {
                let cfg = MomentumConfig::with_momentum(beta, gamma);
                if causal {
                    causal_momentum_attention(&qb, &kb, &vb, &cfg, id, eps)?
                } else {
                    momentum_attention(&qb, &kb, &vb, &cfg, id, eps)?
                }
            }
        };
        Ok(self.push(out.into_matrix(), Op::Attention { q, k, v, kernel, batch, len }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(DenseMatrix::from_diag(&[s]), Op::Sum(x))
    }

    /// `½‖x‖²`.
    pub fn half_sq_norm(&mut self, x: Var) -> Var {
        let s = 0.5 * self.value(x).data().iter().map(|e| e * e).sum::<f64>();
        self.push(DenseMatrix::from_diag(&[s]), Op::HalfSqNorm(x))
    }

    /// Mean over rows with a target of `−log softmax(logits_r)[target_r]`,
    /// fused so the gradient is `(p − onehot)/count`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lm = self.value(logits);
        let (rows, cols) = lm.shape();
        if targets.len() != rows {
            return shape_err(format!("{} targets for {rows} rows", targets.len()));
        }
        let mut probs = DenseMatrix::zeros(rows, cols);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..rows {
            let row = lm.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|e| (e - max).exp()).sum();
            for (p, e) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (e - max).exp() / z;
            }
            if let Some(t) = targets[r] {
                if t >= cols {
                    return shape_err(format!("target {t} out of range for {cols} classes"));
                }
                total += z.ln() + max - row[t];
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            DenseMatrix::from_diag(&[loss]),
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs, count },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return shape_err(format!("loss must be scalar, found {:?}", self.value(loss).shape()));
        }
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(DenseMatrix::from_diag(&[1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && adj[i].is_none() {
                adj[i] = Some(DenseMatrix::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads: adj })
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) -> Result<()> {
        let mut acc = |v: Var, m: DenseMatrix| -> Result<()> {
            match &mut adj[v.0] {
                Some(a) => a.axpy(1.0, &m),
                slot => {
                    *slot = Some(m);
                    Ok(())
                }
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_transposed(val(*b))?)?;
                acc(*b, val(*a).transposed_matmul(g)?)?;
            }
            Op::Linear { x, w } => {
                acc(*x, g.matmul(val(*w))?)?;
                acc(*w, g.transposed_matmul(val(*x))?)?;
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s))?,
            Op::AddBias { x, b } => {
                let mut db = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, e) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += e;
                    }
                }
                acc(*x, g.clone())?;
                acc(*b, db)?;
            }
            Op::Map { x, act } => {
                let xm = val(*x);
                let data = g.data().iter().zip(xm.data()).map(|(gi, xi)| gi * act.derivative(*xi)).collect();
                acc(*x, DenseMatrix::from_vec(g.rows(), g.cols(), data)?)?;
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = g.shape();
                let gm = val(*gain).data();
                let mut dgain = DenseMatrix::zeros(1, cols);
                let mut dbias = DenseMatrix::zeros(1, cols);
                let mut dx = DenseMatrix::zeros(rows, cols);
                let mut dh = vec![0.0; cols];
                for r in 0..rows {
                    let (gr, hr) = (g.row(r), xhat.row(r));
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for c in 0..cols {
                        dgain.data_mut()[c] += gr[c] * hr[c];
                        dbias.data_mut()[c] += gr[c];
                        dh[c] = gr[c] * gm[c];
                        m1 += dh[c];
                        m2 += dh[c] * hr[c];
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std[r] * (dh[c] - m1 - hr[c] * m2);
                    }
                }
                acc(*x, dx)?;
                acc(*gain, dgain)?;
                acc(*bias, dbias)?;
            }
            Op::SliceCols { x, start } => {
                let xm = val(*x);
                let mut dx = DenseMatrix::zeros(xm.rows(), xm.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, dx)?;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, DenseMatrix::from_fn(g.rows(), w, |r, c| g[(r, off + c)]))?;
                    off += w;
                }
            }
            Op::GatherRows { table, idx } => {
                let tm = val(*table);
                let mut dt = DenseMatrix::zeros(tm.rows(), tm.cols());
                for (r, &t) in idx.iter().enumerate() {
                    for (d, e) in dt.row_mut(t).iter_mut().zip(g.row(r)) {
                        *d += e;
                    }
                }
                acc(*table, dt)?;
            }
            Op::TileRows { x } => {
                let xm = val(*x);
                let n = xm.rows();
                let mut dx = DenseMatrix::zeros(n, xm.cols());
                for r in 0..g.rows() {
                    for (d, e) in dx.row_mut(r % n).iter_mut().zip(g.row(r)) {
                        *d += e;
                    }
                }
                acc(*x, dx)?;
            }
            Op::ScaleRows { x, coeffs } => {
                acc(*x, DenseMatrix::from_fn(g.rows(), g.cols(), |r, c| coeffs[r] * g[(r, c)]))?;
            }
            Op::Attention { q, k, v, kernel, batch, len } => {
                let (qm, km, vm) = (val(*q), val(*k), val(*v));
                let (d, dv, n) = (qm.cols(), vm.cols(), *len);
                let mut dq = DenseMatrix::zeros(qm.rows(), d);
                let mut dk = DenseMatrix::zeros(km.rows(), d);
                let mut dvm = DenseMatrix::zeros(vm.rows(), dv);
                for b in 0..*batch {
                    let seq = |m: &DenseMatrix, w: usize| -> Vec<f64> { m.data()[b * n * w..(b + 1) * n * w].to_vec() };
                    let (qs, ks, vs, gs) = (seq(qm, d), seq(km, d), seq(vm, dv), seq(g, dv));
                    let grads = match *kernel {
                        AttentionKernel::Softmax { causal } => softmax_backward(&qs, &ks, &vs, &gs, n, d, dv, causal),
                        AttentionKernel::Linear { causal, eps } => {
                            momentum_backward(&qs, &ks, &vs, &gs, n, d, dv, 0.0, 1.0, eps, causal)?
                        }
                        AttentionKernel::Momentum { causal, beta, gamma, eps } => {
                            momentum_backward(&qs, &ks, &vs, &gs, n, d, dv, beta, gamma, eps, causal)?
                        }
                    };
                    dq.data_mut()[b * n * d..(b + 1) * n * d].copy_from_slice(&grads.dq);
                    dk.data_mut()[b * n * d..(b + 1) * n * d].copy_from_slice(&grads.dk);
                    dvm.data_mut()[b * n * dv..(b + 1) * n * dv].copy_from_slice(&grads.dv);
                }
                acc(*q, dq)?;
                acc(*k, dk)?;
                acc(*v, dvm)?;
            }
            Op::Sum(x) => {
                let xm = val(*x);
                let s = g[(0, 0)];
                acc(*x, DenseMatrix::from_fn(xm.rows(), xm.cols(), |_, _| s))?;
            }
            Op::HalfSqNorm(x) => acc(*x, val(*x).scale(g[(0, 0)]))?,
            Op::SoftmaxCrossEntropy { logits, targets, probs, count } => {
                let mut dl = DenseMatrix::zeros(probs.rows(), probs.cols());
                if *count > 0 {
                    let s = g[(0, 0)] / *count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for (d, p) in dl.row_mut(r).iter_mut().zip(probs.row(r)) {
                                *d = s * p;
                            }
                            dl[(r, t)] -= s;
                        }
                    }
                }
                acc(*logits, dl)?;
            }
        }
        Ok(())
    }
}
