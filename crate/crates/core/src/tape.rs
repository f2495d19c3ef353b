//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends its
//! output value and a record of how it was produced; [`Tape::backward`] walks
//! the records in reverse and accumulates gradients into one slot per value.
//! Values consumed by several operations receive the sum of the contributions.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a value slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Sqrt,
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    BatchMean,
    BatchVar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRows(Var, Var),
    SubRows(Var, Var),
    MulRows(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Reciprocal(Var),
    Sum(Var),
    Mean(Var),
    BatchMean(Var),
    BatchVar(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

/// Per-feature statistics computed inside [`Tape::batch_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Records a leaf value (parameter or constant input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::shape("elementwise", &[arity], &[inputs.len()]));
        }
        match kind {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Sub => self.sub(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Tanh => Ok(self.tanh(inputs[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(inputs[0])),
            Elementwise::Sqrt => self.sqrt(inputs[0]),
            Elementwise::Reciprocal => self.reciprocal(inputs[0]),
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return ta.zip_map(tb, op, f);
        }
        if tb.is_scalar_like() {
            let s = tb.data()[0];
            return Ok(ta.map(|x| f(x, s)));
        }
        if ta.is_scalar_like() {
            let s = ta.data()[0];
            return Ok(tb.map(|x| f(s, x)));
        }
        Err(Error::shape(op, ta.shape(), tb.shape()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn rows_op(
        &mut self,
        op: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (tx, tr) = (self.value(x), self.value(row));
        let [_, d] = tx.dims2(op)?;
        if tr.shape() != [d] {
            return Err(Error::shape(op, tx.shape(), tr.shape()));
        }
        let r = tr.data();
        let data = tx
            .data()
            .chunks_exact(d)
            .flat_map(|xs| xs.iter().zip(r).map(|(&a, &b)| f(a, b)))
            .collect();
        Tensor::new(tx.shape(), data)
    }

    /// `x[i, j] + row[j]` for a `[batch × d]` matrix and a length-`d` vector.
    pub fn add_rows(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.rows_op("add_rows", x, row, |a, b| a + b)?;
        Ok(self.push(out, Op::AddRows(x, row)))
    }

    pub fn sub_rows(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.rows_op("sub_rows", x, row, |a, b| a - b)?;
        Ok(self.push(out, Op::SubRows(x, row)))
    }

    pub fn mul_rows(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.rows_op("mul_rows", x, row, |a, b| a * b)?;
        Ok(self.push(out, Op::MulRows(x, row)))
    }

    /// Repeats a length-`d` vector into a `[batch × d]` matrix.
    pub fn broadcast_rows(&mut self, row: Var, batch: usize) -> Result<Var> {
        let tr = self.value(row);
        if tr.shape().len() != 1 {
            return Err(Error::shape("broadcast_rows", tr.shape(), &[batch]));
        }
        let d = tr.numel();
        let data = tr.data().repeat(batch);
        let out = Tensor::new(&[batch, d], data)?;
        Ok(self.push(out, Op::BroadcastRows(row)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k))
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::Shift(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if let Some(bad) = tx.data().iter().find(|v| **v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        let out = tx.map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(x)))
    }

    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.data().iter().any(|v| *v == 0.0) {
            return Err(Error::Domain {
                op: "reciprocal",
                detail: "division by zero".into(),
            });
        }
        let out = tx.map(|v| 1.0 / v);
        Ok(self.push(out, Op::Reciprocal(x)))
    }

    pub fn reduce(&mut self, kind: Reduce, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() == 0 {
            return Err(Error::EmptyAxis { op: "reduce" });
        }
        match kind {
            Reduce::Sum => {
                let out = Tensor::scalar(tx.sum());
                Ok(self.push(out, Op::Sum(x)))
            }
            Reduce::Mean => {
                let out = Tensor::scalar(tx.sum() / tx.numel() as f64);
                Ok(self.push(out, Op::Mean(x)))
            }
            Reduce::BatchMean => {
                let [m, d] = tx.dims2("batch_mean")?;
                if m == 0 {
                    return Err(Error::EmptyAxis { op: "batch_mean" });
                }
                let out = Tensor::vector(column_means(tx.data(), m, d));
                Ok(self.push(out, Op::BatchMean(x)))
            }
            Reduce::BatchVar => {
                let [m, d] = tx.dims2("batch_var")?;
                if m == 0 {
                    return Err(Error::EmptyAxis { op: "batch_var" });
                }
                let mean = column_means(tx.data(), m, d);
                let out = Tensor::vector(column_vars(tx.data(), &mean, m, d));
                Ok(self.push(out, Op::BatchVar(x)))
            }
        }
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, x)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let [m, n] = tx.dims2("slice_cols")?;
        if start > end || end > n {
            return Err(Error::shape("slice_cols", tx.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for row in tx.data().chunks_exact(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::new(&[m, w], data)?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, end)?;
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyAxis { op: "concat_rows" })?;
        let n = self.value(*first).dims2("concat_rows")?[1];
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let tp = self.value(p);
            let [m, np] = tp.dims2("concat_rows")?;
            if np != n {
                return Err(Error::shape("concat_rows", &[rows, n], tp.shape()));
            }
            rows += m;
            data.extend_from_slice(tp.data());
        }
        let out = Tensor::new(&[rows, n], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Fused batch-normalizing transform over the leading (batch) axis.
    ///
    /// Computes `beta + gamma * (x - mean) / sqrt(var + eps)` with the biased
    /// batch variance. Gradients flow through the statistics. `beta = None`
    /// means the shift is structurally absent.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<(Var, FeatureStats)> {
        let tx = self.value(x);
        let [m, d] = tx.dims2("batch_norm")?;
        if m == 0 {
            return Err(Error::EmptyAxis { op: "batch_norm" });
        }
        if self.value(gamma).shape() != [d] {
            return Err(Error::shape("batch_norm", tx.shape(), self.value(gamma).shape()));
        }
        if let Some(b) = beta {
            if self.value(b).shape() != [d] {
                return Err(Error::shape("batch_norm", tx.shape(), self.value(b).shape()));
            }
        }
        let mean = column_means(tx.data(), m, d);
        let var = column_vars(tx.data(), &mean, m, d);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(m * d);
        for row in tx.data().chunks_exact(d) {
            for j in 0..d {
                xhat.push((row[j] - mean[j]) * inv_std[j]);
            }
        }
        let g = self.value(gamma).data();
        let b = beta.map(|b| self.value(b).data());
        let mut out = Vec::with_capacity(m * d);
        for row in xhat.chunks_exact(d) {
            for j in 0..d {
                out.push(g[j] * row[j] + b.map_or(0.0, |b| b[j]));
            }
        }
        let out = Tensor::new(&[m, d], out)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, FeatureStats { mean, var }))
    }

    /// Mean softmax cross-entropy of `[n × k]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let [n, k] = tl.dims2("softmax_cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape("softmax_cross_entropy", tl.shape(), &[targets.len()]));
        }
        if n == 0 {
            return Err(Error::EmptyAxis { op: "softmax_cross_entropy" });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Domain {
                op: "softmax_cross_entropy",
                detail: format!("target {bad} out of range for {k} classes"),
            });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0;
        for (row, &t) in tl.data().chunks_exact(k).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[t];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every value slot.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let tl = self.value(loss);
        if tl.numel() != 1 {
            return Err(Error::NotScalar {
                shape: tl.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(tl.shape()));

        for i in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let g = g.data();
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let [m, k] = self.value(*a).dims2("matmul")?;
                    let n = self.value(*b).dims2("matmul")?[1];
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    // dA += dC · Bᵀ ; dB += Aᵀ · dC
                    let ga = slot(lower, *a, self.value(*a).shape());
                    gemm(m, n, k, g, false, vb, true, ga, 1.0);
                    let gb = slot(lower, *b, self.value(*b).shape());
                    gemm(k, m, n, va, true, g, false, gb, 1.0);
                }
                Op::Add(a, b) => {
                    accumulate_broadcast(lower, *a, self.value(*a), g, 1.0);
                    accumulate_broadcast(lower, *b, self.value(*b), g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate_broadcast(lower, *a, self.value(*a), g, 1.0);
                    accumulate_broadcast(lower, *b, self.value(*b), g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, gk)| gk * pick(tb, k))
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, gk)| gk * pick(ta, k))
                        .collect();
                    accumulate_broadcast(lower, *a, ta, &ga, 1.0);
                    accumulate_broadcast(lower, *b, tb, &gb, 1.0);
                }
                Op::AddRows(x, r) | Op::SubRows(x, r) => {
                    let sign = if matches!(self.ops[i], Op::SubRows(..)) { -1.0 } else { 1.0 };
                    add_into(slot(lower, *x, out.shape()), g, 1.0);
                    let d = self.value(*r).numel();
                    let gr = slot(lower, *r, self.value(*r).shape());
                    for row in g.chunks_exact(d) {
                        for j in 0..d {
                            gr[j] += sign * row[j];
                        }
                    }
                }
                Op::MulRows(x, r) => {
                    let tr = self.value(*r).data();
                    let tx = self.value(*x).data();
                    let d = tr.len();
                    let gx = slot(lower, *x, out.shape());
                    for (gxr, gr) in gx.chunks_exact_mut(d).zip(g.chunks_exact(d)) {
                        for j in 0..d {
                            gxr[j] += gr[j] * tr[j];
                        }
                    }
                    let grow = slot(lower, *r, self.value(*r).shape());
                    for (xr, gr) in tx.chunks_exact(d).zip(g.chunks_exact(d)) {
                        for j in 0..d {
                            grow[j] += gr[j] * xr[j];
                        }
                    }
                }
                Op::BroadcastRows(r) => {
                    let d = self.value(*r).numel();
                    let gr = slot(lower, *r, self.value(*r).shape());
                    for row in g.chunks_exact(d) {
                        add_into(gr, row, 1.0);
                    }
                }
                Op::Scale(x, k) => add_into(slot(lower, *x, out.shape()), g, *k),
                Op::Shift(x) | Op::Reshape(x) => {
                    let shape = self.value(*x).shape();
                    add_into(slot(lower, *x, shape), g, 1.0);
                }
                Op::Tanh(x) => {
                    let gx = slot(lower, *x, out.shape());
                    for ((acc, gk), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *acc += gk * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = slot(lower, *x, out.shape());
                    for ((acc, gk), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *acc += gk * y * (1.0 - y);
                    }
                }
                Op::Sqrt(x) => {
                    let gx = slot(lower, *x, out.shape());
                    for ((acc, gk), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *acc += gk * 0.5 / y;
                    }
                }
                Op::Reciprocal(x) => {
                    let gx = slot(lower, *x, out.shape());
                    for ((acc, gk), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *acc -= gk * y * y;
                    }
                }
                Op::Sum(x) => {
                    let gx = slot(lower, *x, self.value(*x).shape());
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel() as f64;
                    let gx = slot(lower, *x, self.value(*x).shape());
                    gx.iter_mut().for_each(|v| *v += g[0] / n);
                }
                Op::BatchMean(x) => {
                    let [m, d] = self.value(*x).dims2("batch_mean")?;
                    let gx = slot(lower, *x, self.value(*x).shape());
                    for row in gx.chunks_exact_mut(d) {
                        for j in 0..d {
                            row[j] += g[j] / m as f64;
                        }
                    }
                }
                Op::BatchVar(x) => {
                    let tx = self.value(*x);
                    let [m, d] = tx.dims2("batch_var")?;
                    let mean = column_means(tx.data(), m, d);
                    let gx = slot(lower, *x, tx.shape());
                    for (grow, xrow) in gx.chunks_exact_mut(d).zip(tx.data().chunks_exact(d)) {
                        for j in 0..d {
                            grow[j] += g[j] * 2.0 * (xrow[j] - mean[j]) / m as f64;
                        }
                    }
                }
                Op::SliceCols(x, start) => {
                    let n = self.value(*x).dims2("slice_cols")?[1];
                    let w = out.dims2("slice_cols")?[1];
                    let gx = slot(lower, *x, self.value(*x).shape());
                    for (grow, row) in gx.chunks_exact_mut(n).zip(g.chunks_exact(w)) {
                        add_into(&mut grow[*start..start + w], row, 1.0);
                    }
                }
                Op::SliceRows(x, start) => {
                    let n = self.value(*x).row_len();
                    let gx = slot(lower, *x, self.value(*x).shape());
                    add_into(&mut gx[start * n..start * n + g.len()], g, 1.0);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).numel();
                        let gp = slot(lower, *p, self.value(*p).shape());
                        add_into(gp, &g[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let [m, d] = out.dims2("batch_norm")?;
                    let gam = self.value(*gamma).data();
                    // Per-feature sums of dy and dy * xhat.
                    let mut sum_dy = vec![0.0; d];
                    let mut sum_dy_xhat = vec![0.0; d];
                    for (grow, xrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            sum_dy[j] += grow[j];
                            sum_dy_xhat[j] += grow[j] * xrow[j];
                        }
                    }
                    let mf = m as f64;
                    let gx = slot(lower, *x, out.shape());
                    for ((gxr, grow), xrow) in gx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(xhat.chunks_exact(d))
                    {
                        for j in 0..d {
                            gxr[j] += gam[j]
                                * inv_std[j]
                                * (grow[j] - sum_dy[j] / mf - xrow[j] * sum_dy_xhat[j] / mf);
                        }
                    }
                    add_into(slot(lower, *gamma, &[d]), &sum_dy_xhat, 1.0);
                    if let Some(b) = beta {
                        add_into(slot(lower, *b, &[d]), &sum_dy, 1.0);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let shape = self.value(*logits).shape();
                    let k = shape[1];
                    let scale = g[0] / targets.len() as f64;
                    let gl = slot(lower, *logits, shape);
                    for ((grow, prow), &t) in
                        gl.chunks_exact_mut(k).zip(probs.chunks_exact(k)).zip(targets)
                    {
                        for j in 0..k {
                            grow[j] += scale * prow[j];
                        }
                        grow[t] -= scale;
                    }
                }
            }
        }
        let shapes = self.values[..grads.len()]
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradient slots produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes.get(v.0).map_or(&[][..], Vec::as_slice)),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn pick(t: &Tensor, k: usize) -> f64 {
    if t.is_scalar_like() {
        t.data()[0]
    } else {
        t.data()[k]
    }
}

fn accumulate_broadcast(grads: &mut [Option<Tensor>], v: Var, value: &Tensor, g: &[f64], k: f64) {
    let dst = slot(grads, v, value.shape());
    if dst.len() == g.len() {
        add_into(dst, g, k);
    } else {
        dst[0] += k * g.iter().sum::<f64>();
    }
}

pub(crate) fn column_means(data: &[f64], m: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    mean
}

/// Biased (divide-by-m) variance per column.
pub(crate) fn column_vars(data: &[f64], mean: &[f64], m: usize, d: usize) -> Vec<f64> {
    let mut var = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= m as f64);
    var
}
