//! Single-use computation tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because inputs always precede outputs. A tape may be differentiated
//! once; the forward pass must be re-recorded for the next step.

use std::sync::Arc;

use crate::error::{NumError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{gemm_abt_acc, gemm_acc, gemm_atb_acc, transpose, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    SliceRows(Var, usize),
    SegmentMax {
        input: Var,
        argmax: Vec<usize>,
    },
    TemporalConv {
        input: Var,
        kernel: Var,
    },
    SoftmaxCe {
        logits: Var,
        labels: Arc<Vec<usize>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it required one.
    pub fn wrt(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.0].clone(), g.clone()).expect("shape"))
    }

    /// Gradient of a parameter registered on the tape (summed over every use).
    pub fn param(&self, id: ParamId) -> Option<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        for &(pid, node) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match out.as_mut() {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.accumulate_grad(pid, g)?;
            }
        }
        Ok(())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records an input whose gradient should be reported by [`Gradients::wrt`].
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter; its gradient flows back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// `[…, k] × [k, n] → […, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() < 1 || bv.ndim() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
        let mut out_shape = av.shape().to_vec();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul(a, b), needs))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.numel() != xv.last_dim() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let d = xv.last_dim();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            add_into(row, bv.data());
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), needs))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, factor), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(out, Op::Relu(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), needs))
    }

    /// Concatenates along the last axis; all inputs must share row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Config("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut lead = self.value(*first).shape().to_vec();
        lead.pop();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(*first), self.value(p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        lead.push(total);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(lead, out)?, Op::Concat(parts.to_vec()), needs))
    }

    /// Selects rows of a `[rows, d]` view: `out[i] = x[index[i]]`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = (xv.rows(), xv.last_dim());
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            if i >= rows {
                return Err(NumError::Index {
                    what: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::new([index.len(), d], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::GatherRows(x, index), needs))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || start > end || end > xv.shape()[0] {
            return Err(NumError::Index {
                what: "slice_rows",
                index: end,
                bound: xv.shape().first().copied().unwrap_or(0),
            });
        }
        let d = xv.shape()[1];
        let t = Tensor::new([end - start, d], xv.data()[start * d..end * d].to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SliceRows(x, start), needs))
    }

    /// Channel-wise maximum of message rows grouped by `segment[i]`.
    ///
    /// Output row `s` is the element-wise max over all input rows `i` with
    /// `segment[i] == s`. Empty segments produce zeros and receive no gradient.
    /// Ties resolve to the earliest row.
    pub fn segment_max(&mut self, x: Var, segment: &[usize], n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = (xv.rows(), xv.last_dim());
        if segment.len() != rows {
            return Err(NumError::Shape {
                op: "segment_max",
                lhs: xv.shape().to_vec(),
                rhs: vec![segment.len()],
            });
        }
        let mut out = vec![f64::NEG_INFINITY; n_segments * d];
        let mut argmax = vec![usize::MAX; n_segments * d];
        for (i, &s) in segment.iter().enumerate() {
            if s >= n_segments {
                return Err(NumError::Index {
                    what: "segment_max",
                    index: s,
                    bound: n_segments,
                });
            }
            let row = xv.row(i);
            let o = &mut out[s * d..(s + 1) * d];
            let a = &mut argmax[s * d..(s + 1) * d];
            for c in 0..d {
                if row[c] > o[c] || a[c] == usize::MAX {
                    o[c] = row[c];
                    a[c] = i;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&argmax) {
            if *a == usize::MAX {
                *o = 0.0;
            }
        }
        let t = Tensor::new([n_segments, d], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SegmentMax { input: x, argmax }, needs))
    }

    /// Zero-padded "same" 1-D convolution along the time axis.
    ///
    /// `x: [N, T, d]`, `kernel: [w, d, d_out]` with odd `w`; output `[N, T, d_out]`.
    /// Tap `j` reads frame `t + j - (w - 1) / 2`.
    pub fn temporal_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        if xv.ndim() != 3 || kv.ndim() != 3 || kv.shape()[1] != xv.shape()[2] {
            return Err(shape_err("temporal_conv", xv, kv));
        }
        let (n, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (w, d_out) = (kv.shape()[0], kv.shape()[2]);
        if w % 2 == 0 {
            return Err(NumError::Config(format!(
                "temporal kernel width must be odd, got {w}"
            )));
        }
        let mut out = vec![0.0; n * t * d_out];
        for_each_tap(t, w, |j, t0, t1, s0| {
            let k_j = &kv.data()[j * d * d_out..(j + 1) * d * d_out];
            for p in 0..n {
                let xs = &xv.data()[(p * t + s0) * d..(p * t + s0 + (t1 - t0)) * d];
                let ys = &mut out[(p * t + t0) * d_out..(p * t + t1) * d_out];
                gemm_acc(xs, k_j, ys, t1 - t0, d, d_out);
            }
        });
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Tensor::new([n, t, d_out], out)?,
            Op::TemporalConv { input: x, kernel },
            needs,
        ))
    }

    /// Mean softmax cross-entropy of `[M, C]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Result<Var> {
        let lv = self.value(logits);
        let (m, c) = (lv.rows(), lv.last_dim());
        if labels.len() != m {
            return Err(NumError::Shape {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut probs = vec![0.0; m * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(NumError::Index {
                    what: "class label",
                    index: y,
                    bound: c,
                });
            }
            let row = lv.row(i);
            let (lse, p) = softmax_row(row);
            probs[i * c..(i + 1) * c].copy_from_slice(&p);
            total += lse - row[y];
        }
        let loss = if m == 0 { 0.0 } else { total / m as f64 };
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            },
            needs,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(NumError::StaleTape);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut keep = vec![false; n];
        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Param(pid) => {
                    keep[i] = true;
                    params.push((pid, i));
                }
                Op::Leaf if node.needs_grad => keep[i] = true,
                _ => {}
            }
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match if keep[i] { grads[i].clone() } else { grads[i].take() } {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, g) in grads.iter_mut().enumerate() {
            if !keep[i] {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(buf);
        };
        match &nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
                acc(*a, &|da| gemm_abt_acc(g, bv.data(), da, m, n, k));
                acc(*b, &|db| gemm_atb_acc(av.data(), g, db, m, k, n));
            }
            Op::AddBias(x, b) => {
                let d = nodes[x.0].value.last_dim().max(1);
                acc(*x, &|dx| add_into(dx, g));
                acc(*b, &|db| {
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|da| add_into(da, g));
                acc(*b, &|db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|da| add_into(da, g));
                acc(*b, &|db| db.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &|da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                });
                acc(*b, &|db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &|da| da.iter_mut().zip(g).for_each(|(d, s)| *d += s * f)),
            Op::Relu(a) => {
                let out = nodes[i].value.data();
                acc(*a, &|da| {
                    for ((d, gi), o) in da.iter_mut().zip(g).zip(out) {
                        if *o > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::Reshape(a) => acc(*a, &|da| add_into(da, g)),
            Op::Concat(parts) => {
                let rows = nodes[i].value.rows();
                let total = nodes[i].value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.last_dim();
                    acc(*p, &|dp| {
                        for r in 0..rows {
                            add_into(
                                &mut dp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows(x, index) => {
                let d = nodes[x.0].value.last_dim();
                acc(*x, &|dx| {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut dx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let d = nodes[x.0].value.last_dim();
                acc(*x, &|dx| add_into(&mut dx[start * d..start * d + g.len()], g));
            }
            Op::SegmentMax { input, argmax } => {
                let d = nodes[input.0].value.last_dim();
                acc(*input, &|dx| {
                    for (k, &row) in argmax.iter().enumerate() {
                        if row != usize::MAX {
                            dx[row * d + k % d] += g[k];
                        }
                    }
                });
            }
            Op::TemporalConv { input, kernel } => {
                let (xv, kv) = (&nodes[input.0].value, &nodes[kernel.0].value);
                let (n, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (w, d_out) = (kv.shape()[0], kv.shape()[2]);
                acc(*input, &|dx| {
                    for_each_tap(t, w, |j, t0, t1, s0| {
                        let k_jt = transpose(&kv.data()[j * d * d_out..(j + 1) * d * d_out], d, d_out);
                        for p in 0..n {
                            let gs = &g[(p * t + t0) * d_out..(p * t + t1) * d_out];
                            let dxs = &mut dx[(p * t + s0) * d..(p * t + s0 + (t1 - t0)) * d];
                            gemm_acc(gs, &k_jt, dxs, t1 - t0, d_out, d);
                        }
                    });
                });
                acc(*kernel, &|dk| {
                    for_each_tap(t, w, |j, t0, t1, s0| {
                        let dk_j = &mut dk[j * d * d_out..(j + 1) * d * d_out];
                        for p in 0..n {
                            let xs = &xv.data()[(p * t + s0) * d..(p * t + s0 + (t1 - t0)) * d];
                            let gs = &g[(p * t + t0) * d_out..(p * t + t1) * d_out];
                            gemm_atb_acc(xs, gs, dk_j, t1 - t0, d, d_out);
                        }
                    });
                });
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let c = nodes[logits.0].value.last_dim();
                let m = labels.len().max(1) as f64;
                let scale = g[0] / m;
                acc(*logits, &|dl| {
                    for (r, &y) in labels.iter().enumerate() {
                        let row = &mut dl[r * c..(r + 1) * c];
                        for (k, d) in row.iter_mut().enumerate() {
                            let target = if k == y { 1.0 } else { 0.0 };
                            *d += scale * (probs[r * c + k] - target);
                        }
                    }
                });
            }
        }
    }
}

/// Calls `f(tap, t0, t1, s0)` for each kernel tap with the valid output
/// frame range `t0..t1` and the matching first input frame `s0`.
fn for_each_tap(t: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let half = (w - 1) / 2;
    for j in 0..w {
        // input frame s = out frame + j - half
        let t0 = half.saturating_sub(j);
        let t1 = (t + half).saturating_sub(j).min(t);
        if t0 >= t1 {
            continue;
        }
        f(j, t0, t1, t0 + j - half);
    }
}

/// Numerically stable softmax of one row; returns (log-sum-exp, probabilities).
pub fn softmax_row(row: &[f64]) -> (f64, Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (max + sum.ln(), probs)
}

/// Row-wise softmax of a `[rows, C]` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(logits.numel());
    for r in 0..logits.rows() {
        out.extend(softmax_row(logits.row(r)).1);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("softmax preserves shape")
}
