//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] is built fresh for each forward pass. Every op appends a node
//! holding its output value and the references it needs for its backward
//! rule; [`Tape::backward`] consumes the tape and returns the gradients of
//! all leaves that require them. Nodes are appended in evaluation order, so
//! the node list is already topologically sorted and a single reverse sweep
//! visits each node once.

use std::borrow::Cow;

use super::fft;
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of one backward rule, used to prove that the
/// gradient checker catches a broken derivative.
#[derive(Clone, Copy, Debug)]
pub struct BackwardFault {
    pub op: &'static str,
    pub factor: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Recip(Var),
    ColAffine { x: Var, scale: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    PadRows { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    RfftRe(Var),
    RfftIm(Var),
    Irfft { re: Var, im: Var },
    MeanCols(Var),
    Gather { x: Var, idx: Vec<usize> },
    TimeDelayAgg { v: Var, probs: Var, lags: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Recip(..) => "recip",
            Op::ColAffine { .. } => "col_affine",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::PadRows { .. } => "pad_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Gelu(..) => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::RfftRe(..) => "rfft_re",
            Op::RfftIm(..) => "rfft_im",
            Op::Irfft { .. } => "irfft",
            Op::MeanCols(..) => "mean_cols",
            Op::Gather { .. } => "gather",
            Op::TimeDelayAgg { .. } => "time_delay_aggregate",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Dynamically built computation graph.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    fault: Option<BackwardFault>,
}

/// Gradients returned by [`Tape::backward`], indexed by leaf [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, `None` if the leaf did not require grad or was
    /// not connected to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let n = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

/// Softmax of a plain slice, stabilized by max subtraction.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_raw(Cow::Owned(t), true, Op::Leaf)
    }

    /// Leaf borrowed from a parameter store; receives a gradient.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push_raw(Cow::Borrowed(t), true, Op::Leaf)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(Cow::Owned(t), false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Cow<'a, Tensor>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(Cow::Owned(value), rg, op))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, &[a, b], Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, &[a, b], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * s);
        self.push(t, &[x], Op::Scale(x, s))
    }

    fn row_broadcast_check(&self, x: Var, v: Var, op: &'static str) -> Result<usize> {
        let cols = self.value(x).cols();
        if self.value(v).numel() != cols {
            return Err(Error::Shape {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        Ok(cols)
    }

    /// `x + v` with `v` broadcast over rows.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let cols = self.row_broadcast_check(x, v, "add_row")?;
        let vv = self.value(v).data().to_vec();
        let mut t = self.value(x).clone();
        for (i, e) in t.data_mut().iter_mut().enumerate() {
            *e += vv[i % cols];
        }
        self.push(t, &[x, v], Op::AddRow(x, v))
    }

    /// `x ⊙ v` with `v` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let cols = self.row_broadcast_check(x, v, "mul_row")?;
        let vv = self.value(v).data().to_vec();
        let mut t = self.value(x).clone();
        for (i, e) in t.data_mut().iter_mut().enumerate() {
            *e *= vv[i % cols];
        }
        self.push(t, &[x, v], Op::MulRow(x, v))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| 1.0 / v);
        self.push(t, &[x], Op::Recip(x))
    }

    /// Per-column constant affine map `x[:, c]·scale[c] + shift[c]`.
    pub fn col_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let cols = self.value(x).cols();
        if scale.len() != cols || shift.len() != cols {
            return Err(Error::Shape {
                op: "col_affine",
                lhs: self.shape(x).to_vec(),
                rhs: vec![scale.len(), shift.len()],
            });
        }
        let mut t = self.value(x).clone();
        for (i, e) in t.data_mut().iter_mut().enumerate() {
            *e = *e * scale[i % cols] + shift[i % cols];
        }
        self.push(
            t,
            &[x],
            Op::ColAffine {
                x,
                scale: scale.to_vec(),
            },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.matrix_dims(x, "transpose")?;
        let t = self.value(x).transpose();
        self.push(t, &[x], Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, &[x], Op::Reshape(x))
    }

    /// Columns `[start, start+width)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_cols")?;
        if width == 0 || start + width > c {
            return Err(contract(format!(
                "slice_cols [{start}, {}) out of range for {c} columns",
                start + width
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        self.push(Tensor::matrix(r, width, out)?, &[x], Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| contract("concat_cols of nothing"))?;
        let (r, _) = self.matrix_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (ri, ci) = self.matrix_dims(x, "concat_cols")?;
            if ri != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
            widths.push(ci);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::matrix(r, total, out)?, xs, Op::ConcatCols(xs.to_vec()))
    }

    /// Rows `[start, start+height)` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, height: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_rows")?;
        if height == 0 || start + height > r {
            return Err(contract(format!(
                "slice_rows [{start}, {}) out of range for {r} rows",
                start + height
            )));
        }
        let out = self.value(x).data()[start * c..(start + height) * c].to_vec();
        self.push(Tensor::matrix(height, c, out)?, &[x], Op::SliceRows { x, start })
    }

    /// Embed a matrix into `total` zero rows starting at row `start`.
    pub fn pad_rows(&mut self, x: Var, start: usize, total: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "pad_rows")?;
        if start + r > total {
            return Err(contract(format!(
                "pad_rows: {r} rows at offset {start} overflow {total}"
            )));
        }
        let mut out = vec![0.0; total * c];
        out[start * c..(start + r) * c].copy_from_slice(self.value(x).data());
        self.push(Tensor::matrix(total, c, out)?, &[x], Op::PadRows { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.sum() / t.numel() as f64;
        self.push(Tensor::scalar(s), &[x], Op::Mean(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(gelu);
        self.push(t, &[x], Op::Gelu(x))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(contract(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = softmax_strides(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for k in 0..inner {
                for (i, l) in lane.iter_mut().enumerate() {
                    *l = src[o * n * inner + i * inner + k];
                }
                for (i, p) in softmax_slice(&lane).into_iter().enumerate() {
                    out[o * n * inner + i * inner + k] = p;
                }
            }
        }
        self.push(Tensor::new(shape, out)?, &[x], Op::Softmax { x, axis })
    }

    /// Layer normalization over the last axis followed by `gamma ⊙ · + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(contract("layer_norm eps must be positive"));
        }
        let d = self.row_broadcast_check(x, gamma, "layer_norm")?;
        self.row_broadcast_check(x, beta, "layer_norm")?;
        let xv = self.value(x);
        let rows = xv.rows();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mu) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            t,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Column-wise real FFT of an `L×d` matrix; returns `(re, im)`, each `M×d`.
    pub fn rfft(&mut self, x: Var) -> Result<(Var, Var)> {
        let (l, d) = self.matrix_dims(x, "rfft")?;
        if l < 2 {
            return Err(contract(format!("rfft needs at least 2 samples, got {l}")));
        }
        let m = fft::one_sided_len(l);
        let (re, im) = fft::rfft_columns(self.value(x).data(), l, d);
        let vr = self.push(Tensor::matrix(m, d, re)?, &[x], Op::RfftRe(x))?;
        let vi = self.push(Tensor::matrix(m, d, im)?, &[x], Op::RfftIm(x))?;
        Ok((vr, vi))
    }

    /// Inverse of [`Tape::rfft`] back to `len` time steps.
    pub fn irfft(&mut self, re: Var, im: Var, len: usize) -> Result<Var> {
        self.same_shape(re, im, "irfft")?;
        let (m, d) = self.matrix_dims(re, "irfft")?;
        if m != fft::one_sided_len(len) {
            return Err(contract(format!("irfft: {m} bins do not match length {len}")));
        }
        let out = fft::irfft_columns(self.value(re).data(), self.value(im).data(), len, d);
        self.push(Tensor::matrix(len, d, out)?, &[re, im], Op::Irfft { re, im })
    }

    /// Row means of a matrix, `r×c → r×1`.
    pub fn mean_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "mean_cols")?;
        let src = self.value(x);
        let out = (0..r).map(|i| src.row(i).iter().sum::<f64>() / c as f64).collect();
        self.push(Tensor::matrix(r, 1, out)?, &[x], Op::MeanCols(x))
    }

    /// Flat-index gather into a 1-D tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if idx.is_empty() || idx.iter().any(|&i| i >= src.len()) {
            return Err(contract("gather index out of range"));
        }
        let out = idx.iter().map(|&i| src[i]).collect();
        self.push(
            Tensor::new(vec![idx.len()], out)?,
            &[x],
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// `out[t] = Σ_i probs[i] · v[(t + lags[i]) mod L]` over the rows of `v`.
    pub fn time_delay_aggregate(&mut self, v: Var, probs: Var, lags: &[usize]) -> Result<Var> {
        let (l, d) = self.matrix_dims(v, "time_delay_aggregate")?;
        if self.value(probs).numel() != lags.len() {
            return Err(Error::Shape {
                op: "time_delay_aggregate",
                lhs: vec![lags.len()],
                rhs: self.shape(probs).to_vec(),
            });
        }
        if lags.iter().any(|&tau| tau >= l) {
            return Err(contract(format!("lag out of range [0, {l})")));
        }
        let vv = self.value(v).data();
        let p = self.value(probs).data();
        let mut out = vec![0.0; l * d];
        for (&tau, &w) in lags.iter().zip(p) {
            for t in 0..l {
                let src = (t + tau) % l;
                for c in 0..d {
                    out[t * d + c] += w * vv[src * d + c];
                }
            }
        }
        self.push(
            Tensor::matrix(l, d, out)?,
            &[v, probs],
            Op::TimeDelayAgg {
                v,
                probs,
                lags: lags.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let Tape { nodes, fault } = self;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(nodes[loss.0].value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            if let Some(f) = fault {
                if f.op == node.op.name() {
                    g = g.map(|v| v * f.factor);
                }
            }
            backprop_node(&nodes, &mut grads, node, &g)?;
        }

        for (g, n) in grads.iter_mut().zip(&nodes) {
            if !(matches!(n.op, Op::Leaf) && n.requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node<'_>], grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => g.axpy(1.0, &contrib),
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(
    nodes: &[Node<'_>],
    grads: &mut [Option<Tensor>],
    node: &Node<'_>,
    g: &Tensor,
) -> Result<()> {
    let val = |v: Var| -> &Tensor { &nodes[v.0].value };
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if rg(*a) {
                let mut ga = vec![0.0; m * k];
                gemm_nt_acc(g.data(), bv.data(), &mut ga, m, n, k);
                accumulate(nodes, grads, *a, Tensor::matrix(m, k, ga)?);
            }
            if rg(*b) {
                let mut gb = vec![0.0; k * n];
                gemm_tn_acc(av.data(), g.data(), &mut gb, k, m, n);
                accumulate(nodes, grads, *b, Tensor::matrix(k, n, gb)?);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                let mut ga = g.clone();
                ga.data_mut().iter_mut().zip(val(*b).data()).for_each(|(x, y)| *x *= y);
                accumulate(nodes, grads, *a, ga);
            }
            if rg(*b) {
                let mut gb = g.clone();
                gb.data_mut().iter_mut().zip(val(*a).data()).for_each(|(x, y)| *x *= y);
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Scale(x, s) => accumulate(nodes, grads, *x, g.map(|v| v * s)),
        Op::AddRow(x, v) => {
            accumulate(nodes, grads, *x, g.clone());
            if rg(*v) {
                let cols = g.cols();
                let mut gv = vec![0.0; cols];
                for (i, e) in g.data().iter().enumerate() {
                    gv[i % cols] += e;
                }
                let shape = val(*v).shape().to_vec();
                accumulate(nodes, grads, *v, Tensor::new(shape, gv)?);
            }
        }
        Op::MulRow(x, v) => {
            let cols = g.cols();
            let vv = val(*v).data();
            if rg(*x) {
                let mut gx = g.clone();
                for (i, e) in gx.data_mut().iter_mut().enumerate() {
                    *e *= vv[i % cols];
                }
                accumulate(nodes, grads, *x, gx);
            }
            if rg(*v) {
                let xv = val(*x).data();
                let mut gv = vec![0.0; cols];
                for (i, e) in g.data().iter().enumerate() {
                    gv[i % cols] += e * xv[i];
                }
                let shape = val(*v).shape().to_vec();
                accumulate(nodes, grads, *v, Tensor::new(shape, gv)?);
            }
        }
        Op::Recip(x) => {
            let mut gx = g.clone();
            for (e, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                *e *= -y * y;
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::ColAffine { x, scale } => {
            let cols = scale.len();
            let mut gx = g.clone();
            for (i, e) in gx.data_mut().iter_mut().enumerate() {
                *e *= scale[i % cols];
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::Transpose(x) => accumulate(nodes, grads, *x, g.transpose()),
        Op::Reshape(x) => {
            let shape = val(*x).shape().to_vec();
            accumulate(nodes, grads, *x, g.clone().reshape(&shape)?);
        }
        Op::SliceCols { x, start } => {
            let xv = val(*x);
            let (r, c, w) = (xv.rows(), xv.cols(), g.cols());
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
            }
            accumulate(nodes, grads, *x, Tensor::matrix(r, c, gx)?);
        }
        Op::ConcatCols(xs) => {
            let mut offset = 0;
            for &x in xs {
                let xv = val(x);
                let (r, w) = (xv.rows(), xv.cols());
                if rg(x) {
                    let mut gx = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gx.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    accumulate(nodes, grads, x, Tensor::matrix(r, w, gx)?);
                }
                offset += w;
            }
        }
        Op::SliceRows { x, start } => {
            let xv = val(*x);
            let (r, c) = (xv.rows(), xv.cols());
            let mut gx = vec![0.0; r * c];
            gx[start * c..start * c + g.numel()].copy_from_slice(g.data());
            accumulate(nodes, grads, *x, Tensor::matrix(r, c, gx)?);
        }
        Op::PadRows { x, start } => {
            let xv = val(*x);
            let (r, c) = (xv.rows(), xv.cols());
            let gx = g.data()[start * c..(start + r) * c].to_vec();
            accumulate(nodes, grads, *x, Tensor::matrix(r, c, gx)?);
        }
        Op::Sum(x) => {
            let shape = val(*x).shape().to_vec();
            accumulate(nodes, grads, *x, Tensor::full(&shape, g.data()[0]));
        }
        Op::Mean(x) => {
            let xv = val(*x);
            let s = g.data()[0] / xv.numel() as f64;
            accumulate(nodes, grads, *x, Tensor::full(xv.shape(), s));
        }
        Op::Gelu(x) => {
            let mut gx = g.clone();
            for (e, &xi) in gx.data_mut().iter_mut().zip(val(*x).data()) {
                *e *= gelu_grad(xi);
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = softmax_strides(node.value.shape(), *axis);
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for k in 0..inner {
                    let at = |i: usize| o * n * inner + i * inner + k;
                    let dot: f64 = (0..n).map(|i| g.data()[at(i)] * y[at(i)]).sum();
                    for i in 0..n {
                        gx[at(i)] = y[at(i)] * (g.data()[at(i)] - dot);
                    }
                }
            }
            let shape = node.value.shape().to_vec();
            accumulate(nodes, grads, *x, Tensor::new(shape, gx)?);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = g.cols();
            let rows = g.rows();
            let gam = val(*gamma).data();
            if rg(*x) {
                let mut gx = vec![0.0; g.numel()];
                for r in 0..rows {
                    let gr = g.row(r);
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..d {
                        let gh = gr[c] * gam[c];
                        s1 += gh;
                        s2 += gh * xhat[r * d + c];
                    }
                    for c in 0..d {
                        let gh = gr[c] * gam[c];
                        gx[r * d + c] = inv_std[r] / d as f64
                            * (d as f64 * gh - s1 - xhat[r * d + c] * s2);
                    }
                }
                let shape = val(*x).shape().to_vec();
                accumulate(nodes, grads, *x, Tensor::new(shape, gx)?);
            }
            if rg(*gamma) {
                let mut gg = vec![0.0; d];
                for (i, e) in g.data().iter().enumerate() {
                    gg[i % d] += e * xhat[i];
                }
                let shape = val(*gamma).shape().to_vec();
                accumulate(nodes, grads, *gamma, Tensor::new(shape, gg)?);
            }
            if rg(*beta) {
                let mut gb = vec![0.0; d];
                for (i, e) in g.data().iter().enumerate() {
                    gb[i % d] += e;
                }
                let shape = val(*beta).shape().to_vec();
                accumulate(nodes, grads, *beta, Tensor::new(shape, gb)?);
            }
        }
        Op::RfftRe(x) => {
            let (l, d) = (val(*x).rows(), val(*x).cols());
            let gx = fft::rfft_adjoint(Some(g.data()), None, l, d);
            accumulate(nodes, grads, *x, Tensor::matrix(l, d, gx)?);
        }
        Op::RfftIm(x) => {
            let (l, d) = (val(*x).rows(), val(*x).cols());
            let gx = fft::rfft_adjoint(None, Some(g.data()), l, d);
            accumulate(nodes, grads, *x, Tensor::matrix(l, d, gx)?);
        }
        Op::Irfft { re, im } => {
            let (l, d) = (g.rows(), g.cols());
            let m = val(*re).rows();
            let (gr, gi) = fft::irfft_adjoint(g.data(), l, d);
            accumulate(nodes, grads, *re, Tensor::matrix(m, d, gr)?);
            accumulate(nodes, grads, *im, Tensor::matrix(m, d, gi)?);
        }
        Op::MeanCols(x) => {
            let xv = val(*x);
            let (r, c) = (xv.rows(), xv.cols());
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let s = g.data()[i] / c as f64;
                gx[i * c..(i + 1) * c].iter_mut().for_each(|e| *e = s);
            }
            accumulate(nodes, grads, *x, Tensor::matrix(r, c, gx)?);
        }
        Op::Gather { x, idx } => {
            let xv = val(*x);
            let mut gx = vec![0.0; xv.numel()];
            for (&i, &e) in idx.iter().zip(g.data()) {
                gx[i] += e;
            }
            let shape = xv.shape().to_vec();
            accumulate(nodes, grads, *x, Tensor::new(shape, gx)?);
        }
        Op::TimeDelayAgg { v, probs, lags } => {
            let vv = val(*v);
            let (l, d) = (vv.rows(), vv.cols());
            let p = val(*probs).data();
            if rg(*v) {
                let mut gv = vec![0.0; l * d];
                for (&tau, &w) in lags.iter().zip(p) {
                    for t in 0..l {
                        let src = (t + tau) % l;
                        for c in 0..d {
                            gv[src * d + c] += w * g.data()[t * d + c];
                        }
                    }
                }
                accumulate(nodes, grads, *v, Tensor::matrix(l, d, gv)?);
            }
            if rg(*probs) {
                let gp: Vec<f64> = lags
                    .iter()
                    .map(|&tau| {
                        (0..l)
                            .map(|t| {
                                let src = (t + tau) % l;
                                (0..d)
                                    .map(|c| g.data()[t * d + c] * vv.data()[src * d + c])
                                    .sum::<f64>()
                            })
                            .sum()
                    })
                    .collect();
                let shape = val(*probs).shape().to_vec();
                accumulate(nodes, grads, *probs, Tensor::new(shape, gp)?);
            }
        }
    }
    Ok(())
}
