//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse sweep.
//! Every op computes its forward value eagerly when recorded.

use rand::Rng as _;

use super::tensor::{gelu_grad_scalar, gelu_scalar, softmax_in_place, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Dropout { x: Var, mask: Vec<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, rows: Vec<usize> },
    Attention(Box<AttentionRecord<T>>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Sum(Var),
    Reshape(Var),
}

struct AttentionRecord<T> {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    seq_len: usize,
    /// Softmax probabilities, `[batch][head][query][key]`.
    probs: Vec<T>,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation graph confined to one training step.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Learnable leaf; receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// `a · b` or `a · bᵀ` for rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(Error::Shape(format!("matmul needs matrices, got {:?} and {:?}", av.shape(), bv.shape())));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (kb, n, rsb, csb) = if trans_b {
            (bv.shape()[1], bv.shape()[0], 1, bv.shape()[1] as isize)
        } else {
            (bv.shape()[0], bv.shape()[1], bv.shape()[1] as isize, 1)
        };
        if k != kb {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}{}",
                av.shape(),
                bv.shape(),
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(m, k, n, T::one(), av.data(), k as isize, 1, bv.data(), rsb, csb, T::zero(), out.data_mut(), n as isize, 1);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a vector to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(bias).numel() != c {
            return Err(Error::Shape(format!(
                "bias {:?} for rows of width {c}",
                self.value(bias).shape()
            )));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(b) {
                *o = *o + bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!("mul {:?} * {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_scalar);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Inverted dropout. With `rng = None` or `p = 0` this is the identity
    /// and records no node.
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<&mut Rng>) -> Var {
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return x,
        };
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Dropout { x, mask }, rg)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::Shape(format!("layer_norm width {c}")));
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(c).expect("width");
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = Tensor::zeros(xv.shape());
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = Vec::with_capacity(xv.rows());
        for (r, row) in xv.data().chunks(c).enumerate() {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            let xh = &mut xhat[r * c..(r + 1) * c];
            let o = out.row_mut(r);
            for j in 0..c {
                xh[j] = (row[j] - mean) * rs;
                o[j] = xh[j] * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Row lookup `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::Shape("embedding table must be a matrix".into()));
        }
        let (rows, c) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::OutOfRange(format!("embedding id {bad} >= {rows}")));
        }
        if ids.is_empty() {
            return Err(Error::Shape("empty id list".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Selects rows of a matrix.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::OutOfRange(format!("row {bad} >= {n}")));
        }
        if rows.is_empty() {
            return Err(Error::Shape("empty row selection".into()));
        }
        let c = xv.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows { x, rows: rows.to_vec() }, rg))
    }

    /// Multi-head scaled dot-product attention over a packed batch.
    ///
    /// `q`, `k`, `v` are `[batch·seq_len × width]`; head `h` owns columns
    /// `h·d .. (h+1)·d`. `key_mask[row]` is `false` for keys that must not
    /// be attended (padding); their logits are treated as −∞.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize, key_mask: &[bool]) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if !qv.same_shape(kv) || !qv.same_shape(vv) || qv.rank() != 2 {
            return Err(Error::Shape("attention q/k/v shapes differ".into()));
        }
        let (rows, width) = (qv.shape()[0], qv.shape()[1]);
        if heads == 0 || width % heads != 0 || seq_len == 0 || rows % seq_len != 0 || key_mask.len() != rows {
            return Err(Error::Shape(format!(
                "attention rows={rows} width={width} heads={heads} seq_len={seq_len} mask={}",
                key_mask.len()
            )));
        }
        let batch = rows / seq_len;
        let d = width / heads;
        let scale = T::one() / T::from_usize(d).expect("head dim").sqrt();
        let tt = seq_len * seq_len;
        let mut probs = vec![T::zero(); batch * heads * tt];
        let mut out = Tensor::zeros(&[rows, width]);
        let ws = width as isize;
        for b in 0..batch {
            let base = b * seq_len * width;
            for h in 0..heads {
                let off = base + h * d;
                let p = &mut probs[(b * heads + h) * tt..(b * heads + h + 1) * tt];
                // scores = Q Kᵀ · scale
                T::gemm(seq_len, d, seq_len, scale, &qv.data()[off..], ws, 1, &kv.data()[off..], 1, ws, T::zero(), p, seq_len as isize, 1);
                let mask = &key_mask[b * seq_len..(b + 1) * seq_len];
                for row in p.chunks_mut(seq_len) {
                    for (s, &keep) in row.iter_mut().zip(mask) {
                        if !keep {
                            *s = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row);
                }
                T::gemm(seq_len, seq_len, d, T::one(), p, seq_len as isize, 1, &vv.data()[off..], ws, 1, T::zero(), &mut out.data_mut()[off..], ws, 1);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(out, Op::Attention(Box::new(AttentionRecord { q, k, v, heads, seq_len, probs })), rg))
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.rows() != targets.len() {
            return Err(Error::Shape(format!("cross_entropy logits {:?} vs {} targets", lv.shape(), targets.len())));
        }
        let c = lv.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::OutOfRange(format!("target class {bad} >= {c}")));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            // -log softmax(x)[t] = log Σ exp(x - max) - (x[t] - max)
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            loss = loss + lse - (row[t] - max);
            softmax_in_place(row);
        }
        let n = T::from_usize(targets.len()).expect("count");
        let out = Tensor::scalar(loss / n);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Same data viewed with a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::new(shape.to_vec(), xv.data().to_vec())
            .ok()
            .filter(|t| t.numel() == xv.numel())
            .ok_or_else(|| Error::Shape(format!("reshape {:?} to {shape:?}", xv.shape())))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g).expect("gradient shape"),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = g.shape()[1];
                let gd = g.data();
                if self.rg(*a) {
                    // dA = G·Bᵀ (or G·B when B was transposed)
                    let mut da = Tensor::zeros(av.shape());
                    let (rsb, csb) = if *trans_b { (bv.shape()[1] as isize, 1) } else { (1, bv.shape()[1] as isize) };
                    T::gemm(m, n, k, T::one(), gd, n as isize, 1, bv.data(), rsb, csb, T::zero(), da.data_mut(), k as isize, 1);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    if *trans_b {
                        // dB = Gᵀ·A, shape n×k
                        T::gemm(n, m, k, T::one(), gd, 1, n as isize, av.data(), k as isize, 1, T::zero(), db.data_mut(), k as isize, 1);
                    } else {
                        // dB = Aᵀ·G, shape k×n
                        T::gemm(k, m, n, T::one(), av.data(), 1, k as isize, gd, n as isize, 1, T::zero(), db.data_mut(), n as isize, 1);
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Reshape(x) => {
                let back = Tensor::new(self.value(*x).shape().to_vec(), g.data().to_vec())?;
                self.accumulate(grads, *x, back);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    let c = g.cols();
                    let mut db = Tensor::zeros(self.value(*bias).shape());
                    for row in g.data().chunks(c) {
                        for (d, &r) in db.data_mut().iter_mut().zip(row) {
                            *d = *d + r;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = g.data().iter().zip(xv.data()).map(|(&gg, &xx)| gg * gelu_grad_scalar(xx)).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(&gg, &m)| gg * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = g.cols();
                let n = T::from_usize(c).expect("width");
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dg = Tensor::zeros(self.value(*gamma).shape());
                    let mut db = Tensor::zeros(self.value(*beta).shape());
                    for (grow, xrow) in g.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg.data_mut()[j] = dg.data()[j] + grow[j] * xrow[j];
                            db.data_mut()[j] = db.data()[j] + grow[j];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                    self.accumulate(grads, *beta, db);
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(g.shape());
                    let mut dxhat = vec![T::zero(); c];
                    for (r, (grow, xrow)) in g.data().chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..c {
                            dxhat[j] = grow[j] * gam[j];
                            mean_d = mean_d + dxhat[j];
                            mean_dx = mean_dx + dxhat[j] * xrow[j];
                        }
                        mean_d = mean_d / n;
                        mean_dx = mean_dx / n;
                        let out = dx.row_mut(r);
                        for j in 0..c {
                            out[j] = rstd[r] * (dxhat[j] - mean_d - xrow[j] * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Embedding { table, ids } => {
                let mut dt = Tensor::zeros(self.value(*table).shape());
                for (i, &id) in ids.iter().enumerate() {
                    for (d, &gg) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *d = *d + gg;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::GatherRows { x, rows } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (i, &r) in rows.iter().enumerate() {
                    for (d, &gg) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d = *d + gg;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Attention(rec) => self.attention_backward(rec, g, grads),
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.value(*logits).cols();
                let scale = g.item() / T::from_usize(targets.len()).expect("count");
                let mut dl = Tensor::new(self.value(*logits).shape().to_vec(), probs.clone())?;
                for (r, &t) in targets.iter().enumerate() {
                    let row = &mut dl.data_mut()[r * c..(r + 1) * c];
                    row[t] = row[t] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                self.accumulate(grads, *logits, dl);
            }
            Op::Sum(x) => {
                let s = g.item();
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), s));
            }
        }
        Ok(())
    }

    fn attention_backward(&self, rec: &AttentionRecord<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let (qv, kv, vv) = (self.value(rec.q), self.value(rec.k), self.value(rec.v));
        let (rows, width) = (qv.shape()[0], qv.shape()[1]);
        let (heads, t) = (rec.heads, rec.seq_len);
        let batch = rows / t;
        let d = width / heads;
        let scale = T::one() / T::from_usize(d).expect("head dim").sqrt();
        let ws = width as isize;
        let ts = t as isize;
        let mut dq = Tensor::zeros(qv.shape());
        let mut dk = Tensor::zeros(kv.shape());
        let mut dv = Tensor::zeros(vv.shape());
        let mut dp = vec![T::zero(); t * t];
        for b in 0..batch {
            let base = b * t * width;
            for h in 0..heads {
                let off = base + h * d;
                let p = &rec.probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                let go = &g.data()[off..];
                // dV = Pᵀ·dO
                T::gemm(t, t, d, T::one(), p, 1, ts, go, ws, 1, T::zero(), &mut dv.data_mut()[off..], ws, 1);
                // dP = dO·Vᵀ
                T::gemm(t, d, t, T::one(), go, ws, 1, &vv.data()[off..], 1, ws, T::zero(), &mut dp, ts, 1);
                // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                for (prow, drow) in p.chunks(t).zip(dp.chunks_mut(t)) {
                    let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for (dd, &pp) in drow.iter_mut().zip(prow) {
                        *dd = pp * (*dd - dot);
                    }
                }
                // dQ = dS·K·scale, dK = dSᵀ·Q·scale
                T::gemm(t, t, d, scale, &dp, ts, 1, &kv.data()[off..], ws, 1, T::zero(), &mut dq.data_mut()[off..], ws, 1);
                T::gemm(t, t, d, scale, &dp, 1, ts, &qv.data()[off..], ws, 1, T::zero(), &mut dk.data_mut()[off..], ws, 1);
            }
        }
        self.accumulate(grads, rec.q, dq);
        self.accumulate(grads, rec.k, dk);
        self.accumulate(grads, rec.v, dv);
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zeros when unreachable.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }

    pub fn take(&mut self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }
}
