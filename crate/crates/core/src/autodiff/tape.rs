//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every operation appends one node whose inputs are already on the tape, so
//! node order is a topological order and the backward sweep is a single
//! reverse pass.

use rand::Rng;

use super::rng::RngStream;
use super::tensor::{axis_split, kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    AddRowBias { x: Var, bias: Var },
    Gelu { x: Var },
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    GatherRows { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    Sum { x: Var },
    Mean { x: Var },
    AddN { parts: Vec<Var> },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f64>, count: usize },
    Dropout { x: Var, keep: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; it participates in differentiation iff the tensor
    /// was flagged with `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Trainable leaf (copied from a parameter).
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let mut value = tensor.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut value = tensor;
        value.clear_grad();
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { x }, rg))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(shape, out).expect("shape preserved"),
            Op::Scale { x, factor },
            rg,
        )
    }

    /// `x[m×n] + bias[n]`, the bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = tx.dims2()?;
        if tb.numel() != n {
            return Err(shape_err("add_row_bias", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRowBias { x, bias }, rg))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| gelu(*v).0).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("shape preserved"), Op::Gelu { x }, rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, n, inner) = axis_split(t.shape(), axis)?;
        let mut out = t.data().to_vec();
        kernels::softmax_axis(&mut out, outer, n, inner);
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                x,
                outer,
                n,
                inner,
            },
            rg,
        ))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` of width n.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = tx.dims2()?;
        if tg.numel() != n {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.numel() != n {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Selects rows of a `[V×d]` table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Contract(format!(
                    "row index {id} out of range for table of {v} rows"
                )));
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2()?;
        if start + len > n {
            return Err(Error::Contract(format!(
                "column slice {start}..{} out of range for width {n}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&t.data()[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(Error::Empty("concat_cols needs at least one part"))?;
        let (m, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = self.value(*p).dims2()?;
            if pm != m {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(Error::Empty("add_n needs at least one part"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut out = vec![0.0; self.value(*first).numel()];
        for p in parts {
            let t = self.value(*p);
            if t.shape() != shape.as_slice() {
                return Err(shape_err("add_n", self.value(*first), t));
            }
            for (o, v) in out.iter_mut().zip(t.data()) {
                *o += v;
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::AddN {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-softmax probability of `targets` over the rows of
    /// `logits[b×n]` that are not masked out (`mask[r] == false` skips row r).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (b, n) = t.dims2()?;
        if targets.len() != b {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mask: Vec<bool> = match mask {
            Some(m) if m.len() != b => {
                return Err(Error::Shape {
                    op: "cross_entropy mask",
                    lhs: t.shape().to_vec(),
                    rhs: vec![m.len()],
                })
            }
            Some(m) => m.to_vec(),
            None => vec![true; b],
        };
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0;
        for r in 0..b {
            let row = &mut probs[r * n..(r + 1) * n];
            let target = targets[r];
            if mask[r] && target >= n {
                return Err(Error::Contract(format!(
                    "target class {target} out of range for {n} classes"
                )));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            if mask[r] {
                total += lse - row[target];
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = total / count as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1/(1-rate)`. A rate of zero is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let out = t.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { x, keep }, rg))
    }

    /// Back-propagates from a scalar `loss`. Gradients accumulate additively
    /// when a node feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(slot);
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                self.accumulate(grads, *a, |acc| {
                    kernels::matmul_a_bt_acc(g, tb.data(), acc, m, k, n)
                });
                self.accumulate(grads, *b, |acc| {
                    kernels::matmul_at_b_acc(ta.data(), g, acc, m, k, n)
                });
            }
            Op::Transpose { x } => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                self.accumulate(grads, *x, |acc| {
                    for i in 0..r {
                        for j in 0..c {
                            acc[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |acc| add_into(acc, g));
                self.accumulate(grads, *b, |acc| add_into(acc, g));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |acc| add_into(acc, g));
                self.accumulate(grads, *b, |acc| {
                    for (o, v) in acc.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |acc| {
                    for ((o, v), y) in acc.iter_mut().zip(g).zip(tb.data()) {
                        *o += v * y;
                    }
                });
                self.accumulate(grads, *b, |acc| {
                    for ((o, v), x) in acc.iter_mut().zip(g).zip(ta.data()) {
                        *o += v * x;
                    }
                });
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, |acc| {
                    for (o, v) in acc.iter_mut().zip(g) {
                        *o += v * factor;
                    }
                });
            }
            Op::AddRowBias { x, bias } => {
                let n = self.value(*bias).numel();
                self.accumulate(grads, *x, |acc| add_into(acc, g));
                self.accumulate(grads, *bias, |acc| {
                    for row in g.chunks(n) {
                        add_into(acc, row);
                    }
                });
            }
            Op::Gelu { x } => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, |acc| {
                    for ((o, v), xv) in acc.iter_mut().zip(g).zip(tx.data()) {
                        *o += v * gelu(*xv).1;
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                n,
                inner,
            } => {
                let y = node.value.data();
                let (outer, n, inner) = (*outer, *n, *inner);
                self.accumulate(grads, *x, |acc| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * n + i) * inner + j;
                            let dot: f64 = (0..n).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..n {
                                acc[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                self.accumulate(grads, *x, |acc| {
                    let mut dxhat = vec![0.0; n];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for c in 0..n {
                            dxhat[c] = gr[c] * gam[c];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            acc[r * n + c] +=
                                is / n as f64 * (n as f64 * dxhat[c] - s1 - hr[c] * s2);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |acc| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            acc[c] += gr[c] * hr[c];
                        }
                    }
                });
                self.accumulate(grads, *beta, |acc| {
                    for gr in g.chunks(n) {
                        add_into(acc, gr);
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = self.value(*table).shape()[1];
                self.accumulate(grads, *table, |acc| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut acc[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).shape()[1];
                let len = node.value.shape()[1];
                self.accumulate(grads, *x, |acc| {
                    for (r, gr) in g.chunks(len).enumerate() {
                        add_into(&mut acc[r * n + start..r * n + start + len], gr);
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).shape()[1];
                    self.accumulate(grads, *p, |acc| {
                        for (r, gr) in g.chunks(total).enumerate() {
                            add_into(&mut acc[r * w..(r + 1) * w], &gr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, |acc| acc.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean { x } => {
                let scale = g[0] / self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |acc| acc.iter_mut().for_each(|o| *o += scale));
            }
            Op::AddN { parts } => {
                for p in parts {
                    self.accumulate(grads, *p, |acc| add_into(acc, g));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let n = self.value(*logits).shape()[1];
                let scale = g[0] / *count as f64;
                self.accumulate(grads, *logits, |acc| {
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        for c in 0..n {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            acc[r * n + c] += scale * (probs[r * n + c] - onehot);
                        }
                    }
                });
            }
            Op::Dropout { x, keep } => {
                self.accumulate(grads, *x, |acc| {
                    for ((o, v), k) in acc.iter_mut().zip(g).zip(keep) {
                        *o += v * k;
                    }
                });
            }
        }
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (o, v) in acc.iter_mut().zip(g) {
        *o += v;
    }
}
