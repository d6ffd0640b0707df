use rand::Rng;

use super::kernels::{self, ConvGeom, Exec};
use super::Tensor;
use crate::error::{Error, Result};

/// Forward behaviour switch for dropout and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics observed by a train-mode batch norm.
///
/// `var` is the unbiased estimate, which is what running averages track.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, p: usize, q: usize, r: usize },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, inp: usize, out: usize },
    Conv2d { input: Var, kernels: Var, bias: Var, geom: ConvGeom },
    MaxPool { input: Var, argmax: Vec<usize> },
    // Train and infer batch norm share a backward shape: y = gamma * xhat + beta
    // with xhat = (x - mu) * inv_std. Only train mode differentiates through mu
    // and inv_std.
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, channels: usize, inner: usize, batch_stats: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Mask { a: Var, mask: Vec<f64> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SliceRows { a: Var, start: usize, cols: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records operations in execution order for reverse-mode differentiation.
///
/// Inputs always precede the operations that consume them, so a single
/// reverse sweep visits each recorded operation exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            exec,
            ..Self::default()
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A constant leaf (inputs, targets); no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
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

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears every gradient so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NumericalHealth { op: op_name, index });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{op}: operand shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(format!("{op}: expected a matrix, got shape {s:?}"))),
        }
    }

    /// Matrix product `[p×q]·[q×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.matrix_dims("matmul", a)?;
        let (q2, r) = self.matrix_dims("matmul", b)?;
        if q != q2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions disagree for [{p}x{q}] and [{q2}x{r}]"
            )));
        }
        let data = kernels::matmul(self.exec, self.value(a).data(), self.value(b).data(), p, q, r);
        let value = Tensor::new(vec![p, r], data)?;
        self.push("matmul", value, &[a, b], Op::MatMul { a, b, p, q, r })
    }

    /// Affine map `x·wᵀ + b` for row-batched inputs `x [rows×in]`, `w [out×in]`, `b [out]`.
    ///
    /// A rank-1 `x` is treated as a single row and the result is rank-1 too.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let x_shape = self.shape(x).to_vec();
        let (rows, inp, vector_in) = match x_shape[..] {
            [n] => (1, n, true),
            [r, n] => (r, n, false),
            _ => return Err(Error::shape(format!("linear: input must be rank 1 or 2, got {x_shape:?}"))),
        };
        let (out, w_in) = self.matrix_dims("linear", w)?;
        if w_in != inp {
            return Err(Error::shape(format!(
                "linear: weight [{out}x{w_in}] does not accept input width {inp}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::shape(format!(
                    "linear: bias shape {:?} does not match output width {out}",
                    self.shape(b)
                )));
            }
        }
        let mut data = kernels::matmul_a_bt(self.exec, self.value(x).data(), self.value(w).data(), rows, inp, out);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in data.chunks_mut(out) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        let shape = if vector_in { vec![out] } else { vec![rows, out] };
        let value = Tensor::new(shape, data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", value, &inputs, Op::Linear { x, w, b, rows, inp, out })
    }

    /// 2-D cross-correlation of `input [N×C×H×W]` (or `[C×H×W]`) with
    /// `kernels [O×C×k×k]` plus a per-output-channel `bias [O]`.
    ///
    /// `same` zero-pads by `k/2` so spatial extents are preserved; otherwise
    /// the output is `(H−k+1)×(W−k+1)`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, same: bool) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (batch, c_in, height, width, batched) = match in_shape[..] {
            [c, h, w] => (1, c, h, w, false),
            [n, c, h, w] => (n, c, h, w, true),
            _ => return Err(Error::shape(format!("conv2d: input must be [C,H,W] or [N,C,H,W], got {in_shape:?}"))),
        };
        let (c_out, kc, k) = match *self.shape(kernels) {
            [o, c, kh, kw] if kh == kw => (o, c, kh),
            ref s => return Err(Error::shape(format!("conv2d: kernels must be [O,C,k,k], got {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv2d: kernel size {k} must be odd")));
        }
        if kc != c_in {
            return Err(Error::shape(format!(
                "conv2d: kernels expect {kc} input channels, input has {c_in}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?} does not match {c_out} output channels",
                self.shape(bias)
            )));
        }
        let pad = if same { k / 2 } else { 0 };
        if height + 2 * pad < k || width + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv2d: kernel {k}x{k} larger than padded input {}x{}",
                height + 2 * pad,
                width + 2 * pad
            )));
        }
        let geom = ConvGeom { batch, c_in, height, width, c_out, kernel: k, pad };
        let data = kernels::conv2d_forward(
            self.exec,
            &geom,
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
        );
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let shape = if batched { vec![batch, c_out, oh, ow] } else { vec![c_out, oh, ow] };
        let value = Tensor::new(shape, data)?;
        self.push("conv2d", value, &[input, kernels, bias], Op::Conv2d { input, kernels, bias, geom })
    }

    /// Non-overlapping 2×2 max pooling over the last two axes, floor semantics.
    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!("max_pool2d: need at least 2 axes, got {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h < 2 || w < 2 {
            return Err(Error::shape(format!("max_pool2d: input {h}x{w} smaller than the 2x2 window")));
        }
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let (data, argmax) = kernels::max_pool2x2_forward(self.exec, self.value(input).data(), planes, h, w);
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.extend([h / 2, w / 2]);
        let value = Tensor::new(out_shape, data)?;
        self.push("max_pool2d", value, &[input], Op::MaxPool { input, argmax })
    }

    fn bn_layout(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let shape = self.shape(input);
        if shape.len() < 2 {
            return Err(Error::shape(format!("batch_norm: input must be [N,C,...], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(format!(
                    "batch_norm: {name} shape {:?} does not match {c} channels",
                    self.shape(v)
                )));
            }
        }
        Ok((n, c, inner))
    }

    fn bn_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        layout: (usize, usize, usize),
        batch_stats: bool,
    ) -> Result<Var> {
        let (n, c, inner) = layout;
        let x = self.value(input).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    y[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), y)?;
        self.push(
            "batch_norm",
            value,
            &[input, gamma, beta],
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, channels: c, inner, batch_stats },
        )
    }

    /// Train-mode batch normalization over every axis except the channel axis (axis 1).
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, inner) = self.bn_layout(input, gamma, beta)?;
        if n < 2 {
            return Err(Error::shape("batch_norm: train mode needs a batch of at least 2"));
        }
        let x = self.value(input).data();
        let count = (n * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                mean[ch] += x[base..base + inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                var[ch] += x[base..base + inner].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / count).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (count - 1.0)).collect();
        let inv_std = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.bn_apply(input, gamma, beta, &mean, inv_std, (n, c, inner), true)?;
        Ok((out, BatchStats { mean, var: unbiased }))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batch_norm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let layout = self.bn_layout(input, gamma, beta)?;
        if running_mean.len() != layout.1 || running_var.len() != layout.1 {
            return Err(Error::shape("batch_norm: running statistics do not match channel count"));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(input, gamma, beta, running_mean, inv_std, layout, false)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(name, value, &[a], op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary("scale", a, |v| v * factor, Op::Scale(a, factor))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, value, &[a, b], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Inverted dropout. Identity in infer mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Infer || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.apply_mask(a, mask)
    }

    /// Multiplies by a fixed mask; the backward rule treats the mask as constant.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::shape(format!(
                "mask of length {} applied to {} elements",
                mask.len(),
                self.value(a).len()
            )));
        }
        let src = self.value(a);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push("dropout", value, &[a], Op::Mask { a, mask })
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, &[a], Op::Reshape(a))
    }

    /// Row-major flatten of everything after the leading (batch) axis.
    pub fn flatten_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let rows = shape[0];
        let cols = shape[1..].iter().product();
        self.reshape(a, vec![rows, cols])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), &[a], Op::Mean(a))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims("slice_rows", a)?;
        if start >= end || end > rows {
            return Err(Error::shape(format!("slice_rows: range {start}..{end} invalid for {rows} rows")));
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let value = Tensor::new(vec![end - start, cols], data)?;
        self.push("slice_rows", value, &[a], Op::SliceRows { a, start, cols })
    }

    /// Reverse sweep from a scalar `loss`, accumulating gradients into every
    /// node that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Tape("backward already ran on this tape; call zero_grad first".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        let exec = self.exec;
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = node.grad.as_deref() else { continue };
            propagate(exec, before, &node.op, &node.value, grad);
        }
        let bad = self
            .nodes
            .iter()
            .filter_map(|n| n.grad.as_ref())
            .flat_map(|g| g.iter())
            .position(|v| !v.is_finite());
        match bad {
            Some(index) => Err(Error::NumericalHealth { op: "backward", index }),
            None => Ok(()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &mut [Node], v: Var, contribution: impl FnOnce(&[f64]) -> Vec<f64>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let add = contribution(node.value.data());
    match &mut node.grad {
        Some(g) => g.iter_mut().zip(&add).for_each(|(a, b)| *a += b),
        None => node.grad = Some(add),
    }
}

fn accumulate_with(nodes: &mut [Node], v: Var, add: Vec<f64>) {
    accumulate(nodes, v, |_| add)
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn propagate(exec: Exec, nodes: &mut [Node], op: &Op, out: &Tensor, g: &[f64]) {
    match *op {
        Op::Leaf => {}
        Op::MatMul { a, b, p, q, r } => {
            if wants(nodes, a) {
                // dA = dC · Bᵀ
                let da = kernels::matmul_a_bt(exec, g, nodes[b.0].value.data(), p, r, q);
                accumulate_with(nodes, a, da);
            }
            if wants(nodes, b) {
                // dB = Aᵀ · dC
                let db = kernels::matmul_at_b(exec, nodes[a.0].value.data(), g, p, q, r);
                accumulate_with(nodes, b, db);
            }
        }
        Op::Linear { x, w, b, rows, inp, out: width } => {
            if wants(nodes, x) {
                let dx = kernels::matmul(exec, g, nodes[w.0].value.data(), rows, width, inp);
                accumulate_with(nodes, x, dx);
            }
            if wants(nodes, w) {
                let dw = kernels::matmul_at_b(exec, g, nodes[x.0].value.data(), rows, width, inp);
                accumulate_with(nodes, w, dw);
            }
            if let Some(b) = b {
                let mut db = vec![0.0; width];
                for row in g.chunks(width) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                accumulate_with(nodes, b, db);
            }
        }
        Op::Conv2d { input, kernels: kern, bias, ref geom } => {
            if wants(nodes, input) {
                let gi = kernels::conv2d_backward_input(exec, geom, nodes[kern.0].value.data(), g);
                accumulate_with(nodes, input, gi);
            }
            if wants(nodes, kern) || wants(nodes, bias) {
                let (gk, gb) = kernels::conv2d_backward_params(exec, geom, nodes[input.0].value.data(), g);
                accumulate_with(nodes, kern, gk);
                accumulate_with(nodes, bias, gb);
            }
        }
        Op::MaxPool { input, ref argmax } => {
            accumulate(nodes, input, |x| {
                let mut gi = vec![0.0; x.len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    gi[a] += gv;
                }
                gi
            });
        }
        Op::BatchNorm { input, gamma, beta, ref xhat, ref inv_std, channels, inner, batch_stats } => {
            let n = xhat.len() / (channels * inner);
            let m = (n * inner) as f64;
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for s in 0..n {
                for ch in 0..channels {
                    let base = (s * channels + ch) * inner;
                    for i in base..base + inner {
                        dgamma[ch] += g[i] * xhat[i];
                        dbeta[ch] += g[i];
                    }
                }
            }
            if wants(nodes, input) {
                let gam = nodes[gamma.0].value.data().to_vec();
                let mut dx = vec![0.0; xhat.len()];
                for s in 0..n {
                    for ch in 0..channels {
                        let base = (s * channels + ch) * inner;
                        for i in base..base + inner {
                            dx[i] = if batch_stats {
                                // (1/m)·inv_std·γ·(m·dy − Σdy − x̂·Σ(dy·x̂))
                                gam[ch] * inv_std[ch] * (g[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                            } else {
                                gam[ch] * inv_std[ch] * g[i]
                            };
                        }
                    }
                }
                accumulate_with(nodes, input, dx);
            }
            accumulate_with(nodes, gamma, dgamma);
            accumulate_with(nodes, beta, dbeta);
        }
        Op::Relu(a) => accumulate(nodes, a, |x| x.iter().zip(g).map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 }).collect()),
        Op::Sigmoid(a) => {
            let y = out.data();
            accumulate_with(nodes, a, y.iter().zip(g).map(|(y, gv)| gv * y * (1.0 - y)).collect());
        }
        Op::Tanh(a) => {
            let y = out.data();
            accumulate_with(nodes, a, y.iter().zip(g).map(|(y, gv)| gv * (1.0 - y * y)).collect());
        }
        Op::Add(a, b) => {
            accumulate_with(nodes, a, g.to_vec());
            accumulate_with(nodes, b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate_with(nodes, a, g.to_vec());
            accumulate_with(nodes, b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            if wants(nodes, a) {
                let da = nodes[b.0].value.data().iter().zip(g).map(|(y, gv)| y * gv).collect();
                accumulate_with(nodes, a, da);
            }
            if wants(nodes, b) {
                let db = nodes[a.0].value.data().iter().zip(g).map(|(x, gv)| x * gv).collect();
                accumulate_with(nodes, b, db);
            }
        }
        Op::Scale(a, f) => accumulate_with(nodes, a, g.iter().map(|v| v * f).collect()),
        Op::Mask { a, ref mask } => accumulate_with(nodes, a, g.iter().zip(mask).map(|(v, m)| v * m).collect()),
        Op::Reshape(a) => accumulate_with(nodes, a, g.to_vec()),
        Op::Sum(a) => accumulate(nodes, a, |x| vec![g[0]; x.len()]),
        Op::Mean(a) => accumulate(nodes, a, |x| vec![g[0] / x.len() as f64; x.len()]),
        Op::SliceRows { a, start, cols } => accumulate(nodes, a, |x| {
            let mut ga = vec![0.0; x.len()];
            ga[start * cols..start * cols + g.len()].copy_from_slice(g);
            ga
        }),
    }
}
