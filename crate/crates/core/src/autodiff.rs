//! Record-on-execute reverse-mode differentiation.
//!
//! Every operation on a [`Tape`] computes its value eagerly and appends a node
//! holding the value and the parent handles. Nodes are appended in execution
//! order, so parents always precede children and [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axis_split, gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax(Var),
    Conv1d {
        x: Var,
        w: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x)
            | Op::Transpose(x)
            | Op::Reshape(x) => vec![*x],
            Op::Softmax { x, .. } | Op::Narrow { x, .. } | Op::Mean { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv1d { x, w } => vec![*x, *w],
            Op::Concat { parts, .. } => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`; `None` when `var` does not require
    /// gradients or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Single-threaded operation record for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::InvalidShape {
                shape: self.shape(x).to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let (m, k) = va.dims2()?;
        let (k2, n) = vb.dims2()?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds `bias` to every trailing block of `x`; `bias.shape` must equal the
    /// trailing dimensions of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(b.len()) {
            for (v, &bb) in chunk.iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::lit(GELU_C);
        let a = T::lit(GELU_A);
        let half = T::lit(0.5);
        let value = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        self.push(value, Op::Gelu(x))
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().unwrap();
        if self.shape(gamma) != [n] {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.shape(beta) != [n] {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let eps = T::lit(LN_EPS);
        let nt = T::from_usize(n).unwrap();
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / n;
        let mut normalized = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                normalized.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let value = softmax_along(self.value(x), axis);
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Valid 1-D convolution over a `[length, c_in]` sequence with weights
    /// `[kernel, c_in, c_out]`, stride 1, no bias.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (len, c_in) = self.value(x).dims2()?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != c_in || ws[0] > len {
            return Err(self.mismatch("conv1d", x, w));
        }
        let (kernel, c_out) = (ws[0], ws[2]);
        let out_len = len - kernel + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); out_len * c_out];
        for tap in 0..kernel {
            gemm(
                out_len,
                c_in,
                c_out,
                &xv[tap * c_in..],
                false,
                &wv[tap * c_in * c_out..],
                false,
                &mut out,
                tap > 0,
            );
        }
        let value = Tensor::new(vec![out_len, c_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, w }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat inputs"))?;
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(self.mismatch("concat", first, p));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let xs = self.shape(x).to_vec();
        if len == 0 || start + len > xs[axis] {
            return Err(Error::InvalidShape {
                shape: xs,
                reason: format!("narrow [{start}, {}) out of range on axis {axis}", start + len),
            });
        }
        let (outer, full, inner) = axis_split(&xs, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }))
    }

    /// Mean along `axis`, removing it (a rank-1 input yields shape `[1]`).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let xs = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&xs, axis);
        let d = self.value(x).data();
        let lt = T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &d[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        for v in out.iter_mut() {
            *v /= lt;
        }
        let mut shape: Vec<usize> = xs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Mean { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Mean softmax cross-entropy of `[batch, classes]` (or `[classes]`)
    /// logits against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        let classes = *ls.last().unwrap();
        let batch = self.value(logits).numel() / classes;
        if ls.len() > 2 || batch != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: ls,
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::InvalidLabel(format!("target {bad} >= {classes} classes")));
        }
        let d = self.value(logits).data();
        let mut probs = Vec::with_capacity(d.len());
        let mut loss = T::zero();
        for (row, &t) in d.chunks(classes).zip(targets) {
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        loss /= T::from_usize(batch).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(ls, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = va.dims2()?;
                let n = vb.dims2()?.1;
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut da, false);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut db, false);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let bs = self.shape(*bias).to_vec();
                    let n: usize = bs.iter().product();
                    let mut db = vec![T::zero(); n];
                    for chunk in g.data().chunks(n) {
                        for (acc, &v) in db.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(bs, db)?);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Relu(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let c = T::lit(GELU_C);
                let a = T::lit(GELU_A);
                let half = T::lit(0.5);
                let three = T::lit(3.0);
                let dx = g.zip_map(self.value(*x), |gv, v| {
                    let t = (c * (v + a * v * v * v)).tanh();
                    let du = c * (T::one() + three * a * v * v);
                    gv * (half * (T::one() + t) + half * v * (T::one() - t * t) * du)
                });
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let n = self.shape(*gamma)[0];
                let nt = T::from_usize(n).unwrap();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                let mut dx = Vec::with_capacity(g.numel());
                for ((grow, hrow), &is) in g.data().chunks(n).zip(normalized.chunks(n)).zip(inv_std) {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..n {
                        dgamma[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                        let dh = grow[j] * gm[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[j];
                    }
                    for j in 0..n {
                        let dh = grow[j] * gm[j];
                        dx.push(is / nt * (nt * dh - sum_dh - hrow[j] * sum_dh_h));
                    }
                }
                if self.wants(*x) {
                    self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::new(vec![n], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![n], dbeta)?);
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let gd = g.data();
                let mut dx = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for in_ in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + in_;
                        let dot: T = (0..len).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap();
                let mut dx = Vec::with_capacity(y.numel());
                for (yrow, grow) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let gs: T = grow.iter().copied().sum();
                    dx.extend(yrow.iter().zip(grow).map(|(&yv, &gv)| gv - yv.exp() * gs));
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Conv1d { x, w } => {
                let (len, c_in) = self.value(*x).dims2()?;
                let ws = self.shape(*w).to_vec();
                let (kernel, c_out) = (ws[0], ws[2]);
                let out_len = len - kernel + 1;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); len * c_in];
                    for tap in 0..kernel {
                        gemm(
                            out_len,
                            c_out,
                            c_in,
                            g.data(),
                            false,
                            &wv[tap * c_in * c_out..],
                            true,
                            &mut dx[tap * c_in..],
                            true,
                        );
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![len, c_in], dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); kernel * c_in * c_out];
                    for tap in 0..kernel {
                        gemm(
                            c_in,
                            out_len,
                            c_out,
                            &xv[tap * c_in..],
                            true,
                            g.data(),
                            false,
                            &mut dw[tap * c_in * c_out..],
                            false,
                        );
                    }
                    self.accumulate(grads, *w, Tensor::new(ws, dw)?);
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p).to_vec();
                    let len = ps[*axis];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(ps, d)?);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, full, inner) = axis_split(&xs, *axis);
                let len = g.shape()[*axis];
                let mut dx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *x, Tensor::new(xs, dx)?);
            }
            Op::Mean { x, axis } => {
                let xs = self.shape(*x).to_vec();
                let (outer, len, inner) = axis_split(&xs, *axis);
                let lt = T::from_usize(len).unwrap();
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        dx.extend(src.iter().map(|&v| v / lt));
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xs, dx)?);
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, g.transpose2()?);
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.reshape(self.shape(*x))?);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let ls = self.shape(*logits).to_vec();
                let classes = *ls.last().unwrap();
                let scale = g.item() / T::from_usize(targets.len()).unwrap();
                let mut d = probs.clone();
                for (row, &t) in d.chunks_mut(classes).zip(targets) {
                    row[t] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(ls, d)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// Max-subtracted softmax of a plain tensor along `axis`.
pub fn softmax_along<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for in_ in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + in_;
            let m = (0..len).map(|j| d[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (d[idx(j)] - m).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
