//! Reverse-mode differentiation tape.
//!
//! Every forward op appends one node. Nodes whose inputs do not require
//! gradients are stored as plain values, so an inference pass on a fresh tape
//! records nothing beyond the values themselves. `backward` walks the nodes in
//! exact reverse order of execution.

use rand::Rng;

use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics for batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Abs(Var),
    LeakyRelu(Var, f64),
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum {
        x: Var,
        axis: usize,
        scale: f64,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    ScaleRows {
        x: Var,
        s: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Splits `shape` around `axis` into (outer, axis extent, inner) strides.
fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return shape_err(op, format!("axis {axis} out of range for {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != axis)
        .map(|(_, &e)| e)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(op, format!("expected a 2-D tensor, got {s:?}")),
    }
}

/// `c += a · b` with explicit strides (row stride, column stride) for each operand.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a` (m×k), `b` (k×n)
    // and the row-major `c` (m×n); all callers derive them from checked shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major `a · bᵀ` for `a` of shape `m × k` and `b` of shape `n × k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert!(a.len() == m * k && b.len() == n * k, "matmul_nt: buffer sizes do not match");
    let mut c = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        gemm_acc(m, k, n, a, (k as isize, 1), b, (1, k as isize), &mut c);
    }
    c
}

/// Single-threaded record of executed ops.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records a leaf; its `requires_grad` flag decides whether it gets a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        t.zero_grad();
        self.leaf(t)
    }

    /// Records a trainable copy of `t` (its stored gradient is not copied).
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut v = Tensor::new(t.shape(), t.data().to_vec()).expect("param: valid tensor");
        v.set_requires_grad(true);
        self.leaf(v)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, rg: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op: if rg { op } else { Op::Leaf },
            requires_grad: rg,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    // ── forward ops ────────────────────────────────────────────────────

    /// Matrix product of an m×k and a k×n tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return shape_err("matmul", format!("{m}x{k} · {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.data(a),
            (k as isize, 1),
            self.data(b),
            (n as isize, 1),
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(&[a, b]);
        self.push(name, t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x), data)?;
        let rg = self.rg(&[x]);
        self.push(name, t, op, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map("abs", x, f64::abs, Op::Abs(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map(
            "leaky_relu",
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = split_axis("softmax", self.shape(x), axis)?;
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(&[x]);
        self.push("softmax", t, Op::Softmax { x, axis }, rg)
    }

    fn reduce_sum(&mut self, name: &'static str, x: Var, axis: usize, scale: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(name, &shape, axis)?;
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        if inner == 1 {
            for (acc, row) in out.iter_mut().zip(src.chunks_exact(len)) {
                *acc = row.iter().sum();
            }
        }
        for o in (0..outer).filter(|_| inner > 1) {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let t = Tensor::new(&reduced_shape(&shape, axis), out)?;
        let rg = self.rg(&[x]);
        self.push(name, t, Op::Sum { x, axis, scale }, rg)
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_sum("sum", x, axis, 1.0)
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TensorError::Shape {
                op: "mean",
                detail: format!("axis {axis} out of range"),
            })?;
        self.reduce_sum("mean", x, axis, 1.0 / len as f64)
    }

    /// Max along `axis`; the gradient flows to the first maximal element.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis("max", &shape, axis)?;
        let src = self.data(x);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    let at = (o * len + j) * inner + i;
                    let slot = o * inner + i;
                    if src[at] > out[slot] || j == 0 {
                        out[slot] = src[at];
                        argmax[slot] = at;
                    }
                }
            }
        }
        let t = Tensor::new(&reduced_shape(&shape, axis), out)?;
        let rg = self.rg(&[x]);
        self.push("max", t, Op::Max { x, argmax }, rg)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let conforms = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !conforms {
                return shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(xs);
        self.push(
            "concat",
            t,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Gathers rows (slices along axis 0); indices may repeat.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = shape[0];
        if indices.is_empty() {
            return Err(TensorError::Contract("index_select with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return shape_err("index_select", format!("index {bad} >= {rows} rows"));
        }
        let width = self.value(x).numel() / rows;
        let src = self.data(x);
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[x]);
        self.push(
            "index_select",
            t,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape, self.data(x).to_vec())?;
        let rg = self.rg(&[x]);
        self.push("reshape", t, Op::Reshape(x), rg)
    }

    /// Adds a length-C bias to every row of an R×C tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = dims2("add_row", self.value(x))?;
        if self.value(bias).numel() != c {
            return shape_err("add_row", format!("bias {:?} for {c} columns", self.shape(bias)));
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        let rg = self.rg(&[x, bias]);
        self.push("add_row", t, Op::AddRow { x, bias }, rg)
    }

    /// Multiplies row r of an R×C tensor by `s[r]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = dims2("scale_rows", self.value(x))?;
        if self.value(s).numel() != r {
            return shape_err("scale_rows", format!("{} scales for {r} rows", self.value(s).numel()));
        }
        let sv = self.data(s);
        let data = self
            .data(x)
            .chunks(c)
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |v| v * k))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        let rg = self.rg(&[x, s]);
        self.push("scale_rows", t, Op::ScaleRows { x, s }, rg)
    }

    /// Per-column batch normalization of an R×C tensor.
    ///
    /// Training mode normalizes with batch statistics and updates the running
    /// ones; eval mode uses the running statistics and is deterministic.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        training: bool,
    ) -> Result<Var> {
        let (r, c) = dims2("batch_norm", self.value(x))?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c || stats.channels() != c
        {
            return shape_err("batch_norm", format!("affine/stat sizes do not match {c} channels"));
        }
        let src = self.data(x);
        let (mean, inv_std) = if training {
            let mut mean = vec![0.0; c];
            for row in src.chunks(c) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= r as f64);
            let mut var = vec![0.0; c];
            for row in src.chunks(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let biased: Vec<f64> = var.iter().map(|s| s / r as f64).collect();
            let unbiased: Vec<f64> = if r > 1 {
                var.iter().map(|s| s / (r - 1) as f64).collect()
            } else {
                biased.clone()
            };
            let m = stats.momentum;
            for ch in 0..c {
                stats.running_mean[ch] = (1.0 - m) * stats.running_mean[ch] + m * mean[ch];
                stats.running_var[ch] = (1.0 - m) * stats.running_var[ch] + m * unbiased[ch];
            }
            let inv: Vec<f64> = biased.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
            (mean, inv)
        } else {
            let inv: Vec<f64> = stats
                .running_var
                .iter()
                .map(|v| 1.0 / (v + stats.eps).sqrt())
                .collect();
            (stats.running_mean.clone(), inv)
        };
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(r * c);
        let mut out = Vec::with_capacity(r * c);
        for row in src.chunks(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + b[ch]);
            }
        }
        let t = Tensor::new(&[r, c], out)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            "batch_norm",
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        )
    }

    /// Inverted dropout; identity (the same `Var`) when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!("dropout p={p} outside [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x), data)?;
        let rg = self.rg(&[x]);
        self.push("dropout", t, Op::Dropout { x, mask }, rg)
    }

    /// Mean negative log-softmax probability of the true class.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = dims2("cross_entropy", self.value(logits))?;
        if labels.len() != n {
            return shape_err("cross_entropy", format!("{} labels for {n} rows", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Contract(format!(
                "cross_entropy: label {bad} outside [0, {c})"
            )));
        }
        let src = self.data(logits);
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (row, &label) in src.chunks(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let t = Tensor::scalar(loss / n as f64);
        let rg = self.rg(&[logits]);
        self.push(
            "cross_entropy",
            t,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Populates gradients of the scalar `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TensorError::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(nodes, &mut grads, id, &g);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` when `v` needs no gradient.
fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let node = &nodes[id];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            let n = nodes[b.0].value.shape()[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                // dA = dC · Bᵀ
                let bd = nodes[b.0].value.data();
                gemm_acc(m, n, k, g, (n as isize, 1), bd, (1, n as isize), ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                // dB = Aᵀ · dC
                let ad = nodes[a.0].value.data();
                gemm_acc(k, m, n, ad, (1, k as isize), g, (n as isize, 1), gb);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = slot(nodes, grads, *v) {
                    gv.iter_mut().zip(g).for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gb.iter_mut().zip(g).for_each(|(s, d)| *s -= d);
            }
        }
        Op::Mul(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let bd = nodes[b.0].value.data();
                ga.iter_mut().zip(g).zip(bd).for_each(|((s, d), y)| *s += d * y);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                let ad = nodes[a.0].value.data();
                gb.iter_mut().zip(g).zip(ad).for_each(|((s, d), x)| *s += d * x);
            }
        }
        Op::Scale(x, k) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(s, d)| *s += d * k);
            }
        }
        Op::Abs(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let xd = nodes[x.0].value.data();
                gx.iter_mut()
                    .zip(g)
                    .zip(xd)
                    .for_each(|((s, d), v)| *s += d * v.signum() * f64::from(*v != 0.0));
            }
        }
        Op::LeakyRelu(x, slope) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let xd = nodes[x.0].value.data();
                gx.iter_mut()
                    .zip(g)
                    .zip(xd)
                    .for_each(|((s, d), v)| *s += if *v > 0.0 { *d } else { d * slope });
            }
        }
        Op::Softmax { x, axis } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let shape = node.value.shape();
                let (outer, len, inner) = (
                    shape[..*axis].iter().product::<usize>(),
                    shape[*axis],
                    shape[axis + 1..].iter().product::<usize>(),
                );
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] += out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::Sum { x, axis, scale } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let shape = nodes[x.0].value.shape();
                let (outer, len, inner) = (
                    shape[..*axis].iter().product::<usize>(),
                    shape[*axis],
                    shape[axis + 1..].iter().product::<usize>(),
                );
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(s, d)| *s += d * scale);
                    }
                }
            }
        }
        Op::Max { x, argmax } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for (&at, d) in argmax.iter().zip(g) {
                    gx[at] += d;
                }
            }
        }
        Op::Concat { xs, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0;
            for v in xs {
                let len = nodes[v.0].value.shape()[*axis];
                if let Some(gv) = slot(nodes, grads, *v) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut gv[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(s, d)| *s += d);
                    }
                }
                offset += len;
            }
        }
        Op::IndexSelect { x, indices } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let width = g.len() / indices.len();
                for (r, &i) in indices.iter().enumerate() {
                    let src = &g[r * width..(r + 1) * width];
                    gx[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
        }
        Op::AddRow { x, bias } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                let c = gb.len();
                for row in g.chunks(c) {
                    gb.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::ScaleRows { x, s } => {
            let c = node.value.shape()[1];
            if let Some(gx) = slot(nodes, grads, *x) {
                let sv = nodes[s.0].value.data();
                for ((dst, src), k) in gx.chunks_mut(c).zip(g.chunks(c)).zip(sv) {
                    dst.iter_mut().zip(src).for_each(|(a, d)| *a += d * k);
                }
            }
            if let Some(gs) = slot(nodes, grads, *s) {
                let xd = nodes[x.0].value.data();
                for ((acc, src), row) in gs.iter_mut().zip(g.chunks(c)).zip(xd.chunks(c)) {
                    *acc += src.iter().zip(row).map(|(d, v)| d * v).sum::<f64>();
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
        } => {
            let c = inv_std.len();
            let r = g.len() / c;
            let gam = nodes[gamma.0].value.data();
            let mut sum_d = vec![0.0; c];
            let mut sum_dx = vec![0.0; c];
            for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    sum_d[ch] += grow[ch];
                    sum_dx[ch] += grow[ch] * hrow[ch];
                }
            }
            if let Some(gg) = slot(nodes, grads, *gamma) {
                gg.iter_mut().zip(&sum_dx).for_each(|(s, d)| *s += d);
            }
            if let Some(gb) = slot(nodes, grads, *beta) {
                gb.iter_mut().zip(&sum_d).for_each(|(s, d)| *s += d);
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let rf = r as f64;
                for ((dst, grow), hrow) in gx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        dst[ch] += if *training {
                            scale * (grow[ch] - sum_d[ch] / rf - hrow[ch] * sum_dx[ch] / rf)
                        } else {
                            scale * grow[ch]
                        };
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut()
                    .zip(g)
                    .zip(mask)
                    .for_each(|((s, d), m)| *s += d * m);
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                for (r, &label) in labels.iter().enumerate() {
                    for ch in 0..c {
                        let onehot = if ch == label { 1.0 } else { 0.0 };
                        gl[r * c + ch] += scale * (probs[r * c + ch] - onehot);
                    }
                }
            }
        }
    }
}
