//! Tape-based reverse-mode differentiation.
//!
//! Every op appends one node to the tape. Node order is execution order, so
//! `backward` walks the tape from the loss node down to index zero and each
//! node's gradient is complete before it is propagated to its inputs.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<R> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Slice {
        input: Var,
        start: usize,
    },
    Mean(Vec<Var>),
    Sum(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<R>,
        floored: bool,
    },
}

#[derive(Debug, Clone)]
struct Node<R> {
    value: Tensor<R>,
    grad: Option<Vec<R>>,
    requires_grad: bool,
    op: Op<R>,
}

/// Gate weights of a single-layer LSTM cell, stacked in (input, forget,
/// candidate, output) order.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[4d, n]`
    pub w_input: Var,
    /// `[4d, d]`
    pub w_hidden: Var,
    /// `[4d]`
    pub bias: Var,
}

/// The computation tape.
#[derive(Debug, Clone, Default)]
pub struct Graph<R> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that accumulates a gradient.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient buffer, present iff the node requires a gradient and
    /// `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<R>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn vector_len(&self, v: Var, op: &str, what: &str) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(Error::shape(format!("{op}: {what} must be 1-D, got {s:?}"))),
        }
    }

    /// Valid (unpadded) 2-D convolution. `input` is `[C_in, H, W]`, `kernel`
    /// is `[C_out, C_in, kH, kW]`, `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        let (c_in, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape(format!("conv2d: input must be [C,H,W], got {s:?}"))),
        };
        let (c_out, kc, kh, kw) = match self.shape(kernel) {
            [o, c, kh, kw] => (*o, *c, *kh, *kw),
            s => {
                return Err(Error::shape(format!(
                    "conv2d: kernel must be [C_out,C_in,kH,kW], got {s:?}"
                )))
            }
        };
        if kc != c_in {
            return Err(Error::shape(format!(
                "conv2d: kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh > h || kw > w {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape(format!(
                "conv2d: bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![R::zero(); c_out * oh * ow];
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for ky in 0..kh {
                            let row = (c * h + oy * stride + ky) * w + ox * stride;
                            let krow = ((o * c_in + c) * kh + ky) * kw;
                            for kx in 0..kw {
                                acc = acc + k[krow + kx] * x[row + kx];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            },
            &[input, kernel, bias],
        ))
    }

    /// Non-overlapping max pooling with a square window. Ties go to the
    /// first maximal element in row-major window order.
    pub fn max_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        if size == 0 {
            return Err(Error::InvalidArgument("max_pool2d: size must be positive".into()));
        }
        let (c, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape(format!("max_pool2d: input must be [C,H,W], got {s:?}"))),
        };
        if size > h || size > w {
            return Err(Error::shape(format!(
                "max_pool2d: window {size} larger than input {h}x{w}"
            )));
        }
        let oh = (h - size) / size + 1;
        let ow = (w - size) / size + 1;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (ch * h + oy * size) * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = (ch * h + oy * size + dy) * w + ox * size + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }, &[input]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| if x > R::zero() { x } else { R::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    /// `weight · input + bias` with `weight` of shape `[m, n]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.affine(input, weight, Some(bias))
    }

    /// `weight · input`.
    pub fn matvec(&mut self, weight: Var, input: Var) -> Result<Var> {
        self.affine(input, weight, None)
    }

    fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let n = self.vector_len(input, "linear", "input")?;
        let (m, wn) = match self.shape(weight) {
            [m, n] => (*m, *n),
            s => return Err(Error::shape(format!("linear: weight must be [m,n], got {s:?}"))),
        };
        if wn != n {
            return Err(Error::shape(format!(
                "linear: weight is [{m},{wn}] but input has {n} elements"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::shape(format!(
                    "linear: bias must be [{m}], got {:?}",
                    self.shape(b)
                )));
            }
        }
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let out: Vec<R> = (0..m)
            .map(|i| {
                let init = bias.map_or(R::zero(), |b| self.value(b).data()[i]);
                wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(x)
                    .fold(init, |acc, (&wv, &xv)| acc + wv * xv)
            })
            .collect();
        let value = Tensor::from_vec(out);
        let inputs: Vec<Var> = [Some(input), Some(weight), bias].into_iter().flatten().collect();
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &inputs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(R, R) -> R, op: Op<R>) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: R) -> Var {
        let value = self.map(a, |x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x * x);
        self.push(value, Op::Square(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.real_tanh());
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, &[n])
    }

    /// Contiguous sub-range `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.vector_len(a, "slice", "input")?;
        if len == 0 || start + len > n {
            return Err(Error::shape(format!(
                "slice: range {start}..{} out of bounds for length {n}",
                start + len
            )));
        }
        let value = Tensor::from_vec(self.value(a).data()[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice { input: a, start }, &[a]))
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero tensors".into()))?;
        for &v in &vars[1..] {
            self.same_shape(first, v, "mean")?;
        }
        let inv = R::one().real_div(R::from_usize(vars.len()).expect("count"));
        let mut acc = self.value(first).data().to_vec();
        for &v in &vars[1..] {
            for (a, &x) in acc.iter_mut().zip(self.value(v).data()) {
                *a = *a + x;
            }
        }
        for a in &mut acc {
            *a = *a * inv;
        }
        let value = Tensor::new(self.shape(first).to_vec(), acc)?;
        Ok(self.push(value, Op::Mean(vars.to_vec()), vars))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(R::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        self.vector_len(logits, "softmax", "logits")?;
        let probs = softmax_values(self.value(logits).data())?;
        Ok(self.push(Tensor::from_vec(probs), Op::Softmax(logits), &[logits]))
    }

    /// `-ln(max(softmax(logits)[target], 1e-12))` as a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let k = self.vector_len(logits, "cross_entropy", "logits")?;
        if target >= k {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: target {target} out of range for {k} classes"
            )));
        }
        let probs = softmax_values(self.value(logits).data())?;
        let eps = R::of(LOG_EPS);
        let floored = probs[target] < eps;
        let loss = -probs[target].max(eps).real_ln();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
                floored,
            },
            &[logits],
        ))
    }

    /// One LSTM cell update. Returns `(h, c)`.
    pub fn lstm_step(&mut self, x: Var, h_prev: Var, c_prev: Var, p: &LstmParams) -> Result<(Var, Var)> {
        let d = self.vector_len(h_prev, "lstm_step", "h_prev")?;
        if self.shape(c_prev) != [d] {
            return Err(Error::shape(format!(
                "lstm_step: c_prev must be [{d}], got {:?}",
                self.shape(c_prev)
            )));
        }
        if self.shape(p.w_hidden) != [4 * d, d] {
            return Err(Error::shape(format!(
                "lstm_step: hidden weights must be [{}, {d}], got {:?}",
                4 * d,
                self.shape(p.w_hidden)
            )));
        }
        let from_input = self.linear(x, p.w_input, p.bias)?;
        let from_hidden = self.matvec(p.w_hidden, h_prev)?;
        let gates = self.add(from_input, from_hidden)?;
        let i = self.slice(gates, 0, d)?;
        let f = self.slice(gates, d, d)?;
        let g = self.slice(gates, 2 * d, d)?;
        let o = self.slice(gates, 3 * d, d)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let keep = self.mul(f, c_prev)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let squashed = self.tanh(c);
        let h = self.mul(o, squashed)?;
        Ok((h, c))
    }

    fn map(&self, a: Var, f: impl Fn(R) -> R) -> Tensor<R> {
        let v = self.value(a);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    /// Reverse pass from a scalar node. Gradients accumulate into every
    /// node that requires one; calling `backward` twice on one tape sums.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes[loss.0], &[R::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = node.grad.clone() else {
                continue;
            };
            for (target, contribution) in self.local_grads(idx, &upstream) {
                if self.nodes[target.0].requires_grad {
                    accumulate(&mut self.nodes[target.0], &contribution);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` toward each of its inputs.
    fn local_grads(&self, idx: usize, gy: &[R]) -> Vec<(Var, Vec<R>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.value(v).data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            } => {
                let (c_in, h, w) = dims3(self.shape(*input));
                let kshape = self.shape(*kernel);
                let (c_out, kh, kw) = (kshape[0], kshape[2], kshape[3]);
                let (_, oh, ow) = dims3(node.value.shape());
                let x = val(*input);
                let k = val(*kernel);
                let s = *stride;
                let mut gx = vec![R::zero(); x.len()];
                let mut gk = vec![R::zero(); k.len()];
                let mut gb = vec![R::zero(); c_out];
                for o in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gy[(o * oh + oy) * ow + ox];
                            gb[o] = gb[o] + g;
                            for c in 0..c_in {
                                for ky in 0..kh {
                                    let row = (c * h + oy * s + ky) * w + ox * s;
                                    let krow = ((o * c_in + c) * kh + ky) * kw;
                                    for kx in 0..kw {
                                        gx[row + kx] = gx[row + kx] + g * k[krow + kx];
                                        gk[krow + kx] = gk[krow + kx] + g * x[row + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(*input, gx), (*kernel, gk), (*bias, gb)]
            }
            Op::MaxPool2d { input, argmax } => {
                let mut gx = vec![R::zero(); self.value(*input).numel()];
                for (&src, &g) in argmax.iter().zip(gy) {
                    gx[src] = gx[src] + g;
                }
                vec![(*input, gx)]
            }
            Op::Relu(a) => {
                let gx = val(*a)
                    .iter()
                    .zip(gy)
                    .map(|(&x, &g)| if x > R::zero() { g } else { R::zero() })
                    .collect();
                vec![(*a, gx)]
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let wd = val(*weight);
                let n = x.len();
                let mut out = Vec::with_capacity(3);
                if needs(*input) {
                    let mut gx = vec![R::zero(); n];
                    for (i, &g) in gy.iter().enumerate() {
                        for (gxj, &wv) in gx.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                            *gxj = *gxj + g * wv;
                        }
                    }
                    out.push((*input, gx));
                }
                if needs(*weight) {
                    let mut gw = Vec::with_capacity(wd.len());
                    for &g in gy {
                        gw.extend(x.iter().map(|&xv| g * xv));
                    }
                    out.push((*weight, gw));
                }
                if let Some(b) = bias {
                    out.push((*b, gy.to_vec()));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, gy.to_vec()), (*b, gy.to_vec())],
            Op::Sub(a, b) => vec![(*a, gy.to_vec()), (*b, gy.iter().map(|&g| -g).collect())],
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                vec![
                    (*a, gy.iter().zip(xb).map(|(&g, &y)| g * y).collect()),
                    (*b, gy.iter().zip(xa).map(|(&g, &x)| g * x).collect()),
                ]
            }
            Op::Scale(a, factor) => vec![(*a, gy.iter().map(|&g| g * *factor).collect())],
            Op::Square(a) => {
                let two = R::of(2.0);
                vec![(*a, gy.iter().zip(val(*a)).map(|(&g, &x)| two * x * g).collect())]
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                vec![(*a, gy.iter().zip(y).map(|(&g, &s)| g * s * (R::one() - s)).collect())]
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                vec![(*a, gy.iter().zip(y).map(|(&g, &t)| g * (R::one() - t * t)).collect())]
            }
            Op::Reshape(a) => vec![(*a, gy.to_vec())],
            Op::Slice { input, start } => {
                let mut gx = vec![R::zero(); self.value(*input).numel()];
                gx[*start..*start + gy.len()].copy_from_slice(gy);
                vec![(*input, gx)]
            }
            Op::Mean(vars) => {
                let inv = R::one() / R::from_usize(vars.len()).expect("count");
                let g: Vec<R> = gy.iter().map(|&g| g * inv).collect();
                vars.iter().map(|&v| (v, g.clone())).collect()
            }
            Op::Sum(a) => vec![(*a, vec![gy[0]; self.value(*a).numel()])],
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot = y.iter().zip(gy).fold(R::zero(), |acc, (&p, &g)| acc + p * g);
                vec![(*a, y.iter().zip(gy).map(|(&p, &g)| p * (g - dot)).collect())]
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
                floored,
            } => {
                let g = gy[0];
                let gx = if *floored {
                    vec![R::zero(); probs.len()]
                } else {
                    probs
                        .iter()
                        .enumerate()
                        .map(|(j, &p)| {
                            let onehot = if j == *target { R::one() } else { R::zero() };
                            g * (p - onehot)
                        })
                        .collect()
                };
                vec![(*logits, gx)]
            }
        }
    }
}

fn accumulate<R: Real>(node: &mut Node<R>, contribution: &[R]) {
    match node.grad.as_mut() {
        Some(g) => {
            for (a, &c) in g.iter_mut().zip(contribution) {
                *a = *a + c;
            }
        }
        None => node.grad = Some(contribution.to_vec()),
    }
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one().real_div(R::one() + (-x).real_exp())
    } else {
        let e = x.real_exp();
        e.real_div(R::one() + e)
    }
}

/// Numerically stable softmax. Rejects non-finite logits.
pub fn softmax_values<R: Real>(logits: &[R]) -> Result<Vec<R>> {
    if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "softmax logits".into(),
            index,
        });
    }
    let max = logits.iter().fold(R::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<R> = logits.iter().map(|&x| (x - max).real_exp()).collect();
    let total = exps.iter().fold(R::zero(), |acc, &e| acc + e);
    Ok(exps.into_iter().map(|e| e.real_div(total)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1], &[5.0]));
        let k = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, 1).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
        assert_eq!(g.shape(y), &[1, 1, 1]);
    }

    #[test]
    fn conv2d_sums_window() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 2], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, 1).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv2d_rejects_bad_arguments() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 3]));
        let k = g.constant(Tensor::zeros(&[2, 1, 2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.conv2d(x, k, b, 0), Err(Error::InvalidArgument(_))));
        let big = g.constant(Tensor::zeros(&[2, 1, 4, 4]));
        assert!(matches!(g.conv2d(x, big, b, 1), Err(Error::Shape(_))));
        let wrong_c = g.constant(Tensor::zeros(&[2, 3, 2, 2]));
        assert!(matches!(g.conv2d(x, wrong_c, b, 1), Err(Error::Shape(_))));
        let bad_bias = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.conv2d(x, k, bad_bias, 1), Err(Error::Shape(_))));
        let y = g.conv2d(x, k, b, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 1, 1]);
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[3.0, -1.0]));
        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zero_b = g.constant(Tensor::zeros(&[2]));
        let y = g.linear(x, eye, zero_b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let zw = g.constant(Tensor::zeros(&[2, 2]));
        let half = g.constant(t(&[2], &[0.5, 0.5]));
        let y = g.linear(x, zw, half).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        let bad = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.linear(x, bad, zero_b).is_err());
    }

    #[test]
    fn lstm_zero_params() {
        let d = 3;
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.7, -0.2]));
        let h0 = g.constant(Tensor::zeros(&[d]));
        let c0 = g.constant(t(&[d], &[1.0, -2.0, 0.5]));
        let p = LstmParams {
            w_input: g.constant(Tensor::zeros(&[4 * d, 2])),
            w_hidden: g.constant(Tensor::zeros(&[4 * d, d])),
            bias: g.constant(Tensor::zeros(&[4 * d])),
        };
        let (h, c) = g.lstm_step(x, h0, c0, &p).unwrap();
        for (j, &c0v) in [1.0, -2.0, 0.5].iter().enumerate() {
            let cv: f64 = 0.5 * c0v;
            assert!((g.value(c).data()[j] - cv).abs() < 1e-15);
            assert!((g.value(h).data()[j] - 0.5 * cv.tanh()).abs() < 1e-15);
        }

        let zero_c = g.constant(Tensor::zeros(&[d]));
        let (h, c) = g.lstm_step(x, h0, zero_c, &p).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[4]));
        let p = g.softmax(z).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let a = softmax_values(&[1.0f64, -2.0, 0.3]).unwrap();
        let b = softmax_values(&[101.0f64, 98.0, 100.3]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(softmax_values(&[1.0f64, f64::NAN]).is_err());
        let extreme = softmax_values(&[1000.0f64, -1000.0]).unwrap();
        assert!(extreme.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_floor_keeps_loss_finite() {
        let mut g = Graph::new();
        let z = g.param(t(&[2], &[0.0, 500.0]));
        let l = g.cross_entropy(z, 0).unwrap();
        let v = g.value(l).data()[0];
        assert!((v - (-(1e-12f64).ln())).abs() < 1e-9);
        g.backward(l).unwrap();
        assert!(g.grad(z).unwrap().is_finite());
    }

    #[test]
    fn grad_accumulates_over_consumers() {
        // y = sum(x*x) + sum(3x) consumed twice; fused form is 2x + 3.
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let both = g.add(sq, lin).unwrap();
        let y = g.sum(both);
        g.backward(y).unwrap();
        let grad = g.grad(x).unwrap();
        for (gv, xv) in grad.data().iter().zip([1.0, -2.0, 0.5]) {
            assert_eq!(*gv, 2.0 * xv + 3.0);
        }
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn max_pool_routes_to_first_max() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2, 2], &[1.0, 3.0, 3.0, 2.0]));
        let y = g.max_pool2d(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
