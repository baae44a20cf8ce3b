use std::cell::{Ref, RefCell};

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::{Rng, RngExt};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Lower bound applied to probabilities before taking the log.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
struct PoolGeom {
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Pool {
        input: Var,
        kind: PoolKind,
        geom: PoolGeom,
        argmax: Vec<usize>,
    },
    GlobalPool {
        input: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    ChannelPool {
        input: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Mse(Var, Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::Pool { .. } => "pool",
            Op::GlobalPool { .. } => "global_pool",
            Op::ChannelPool { .. } => "channel_pool",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Dropout { .. } => "dropout",
            Op::Mse(..) => "mse_loss",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// A tape is single-threaded. Build a fresh tape per forward pass; parameters
/// enter as [`Tape::leaf`] values and inputs as [`Tape::constant`] values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

/// For every element of `out_shape`, the flat offset into a tensor of
/// `shape` that broadcasts to it.
fn broadcast_index(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { s };
        s *= shape[d];
    }
    let n: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        idx.push(offset);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

fn reduce_to(grad: &[f64], index: &[usize], len: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; len];
    for (&g, &i) in grad.iter().zip(index) {
        acc[i] += g;
    }
    acc
}

fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape {
            op,
            detail: format!("expected [C,H,W], got {shape:?}"),
        }),
    }
}

fn conv_extent(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if k == 0 || padded < k || !(padded - k).is_multiple_of(stride) {
        return Err(Error::Shape {
            op,
            detail: format!("extent {size} with kernel {k}, stride {stride}, padding {pad} is not integral"),
        });
    }
    Ok((padded - k) / stride + 1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        check_finite(op.name(), value.data())?;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable value; gradients are computed for it.
    pub fn leaf(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    /// Input value; no gradient is tracked.
    pub fn constant(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Names of the recorded operations in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op.name()).collect()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = match (ta.shape(), tb.shape()) {
                ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        lhs: ta.shape().to_vec(),
                        rhs: tb.shape().to_vec(),
                    })
                }
            };
            Tensor::new(vec![m, n], kernels::matmul(ta.data(), tb.data(), m, k, n))?
        };
        self.push(out, Op::MatMul(a, b), self.needs_grad(&[a, b]))
    }

    fn binary(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let shape = broadcast_shape(op, ta.shape(), tb.shape())?;
        let ia = broadcast_index(ta.shape(), &shape);
        let ib = broadcast_index(tb.shape(), &shape);
        let (da, db) = (ta.data(), tb.data());
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
        Tensor::new(shape, data)
    }

    /// Element-wise sum with same-rank broadcasting over unit extents.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), self.needs_grad(&[a, b]))
    }

    /// Element-wise product with same-rank broadcasting over unit extents.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), self.needs_grad(&[a, b]))
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let out = {
            let t = &self.nodes.borrow()[a.0].value;
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v * s).collect())?
        };
        self.push(out, Op::Scale(a, s), self.needs_grad(&[a]))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = {
            let t = &self.nodes.borrow()[a.0].value;
            Tensor::scalar(t.data().iter().copied().sum::<f64>())
        };
        self.push(out, Op::Sum(a), self.needs_grad(&[a]))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), self.needs_grad(&[a]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = inputs
                .first()
                .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
            let base = nodes[first.0].value.shape().to_vec();
            if axis >= base.len() {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("axis {axis} out of range for {base:?}"),
                });
            }
            let mut total = 0;
            for v in inputs {
                let s = nodes[v.0].value.shape();
                let compatible =
                    s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
                if !compatible {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in inputs {
                    let t = &nodes[v.0].value;
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            Tensor::new(shape, data)?
        };
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            self.needs_grad(inputs),
        )
    }

    /// `input [C,H,W]`, `kernel [C_out,C,kh,kw]` -> `[C_out, H', W']`.
    pub fn conv2d(&self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (out, geom) = {
            let nodes = self.nodes.borrow();
            let (ti, tk) = (&nodes[input.0].value, &nodes[kernel.0].value);
            let (c, h, w) = image_dims("conv2d", ti.shape())?;
            let (c_out, kh, kw) = match *tk.shape() {
                [co, ci, kh, kw] if ci == c => (co, kh, kw),
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "conv2d",
                        lhs: ti.shape().to_vec(),
                        rhs: tk.shape().to_vec(),
                    })
                }
            };
            let geom = ConvGeom {
                c_in: c,
                h,
                w,
                c_out,
                kh,
                kw,
                stride,
                pad: padding,
                oh: conv_extent("conv2d", h, kh, stride, padding)?,
                ow: conv_extent("conv2d", w, kw, stride, padding)?,
            };
            let data = kernels::conv_forward(ti.data(), tk.data(), &geom);
            (Tensor::new(vec![c_out, geom.oh, geom.ow], data)?, geom)
        };
        self.push(
            out,
            Op::Conv2d { input, kernel, geom },
            self.needs_grad(&[input, kernel]),
        )
    }

    /// `input [C_in,H,W]`, `kernel [C_in,C_out,kh,kw]` ->
    /// `[C_out, (H-1)s + kh - 2p, (W-1)s + kw - 2p]`.
    ///
    /// This is the adjoint of [`Tape::conv2d`] with the same kernel tensor.
    pub fn conv2d_transpose(&self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv2d_transpose stride must be positive".into(),
            ));
        }
        let (out, geom) = {
            let nodes = self.nodes.borrow();
            let (ti, tk) = (&nodes[input.0].value, &nodes[kernel.0].value);
            let (c, h, w) = image_dims("conv2d_transpose", ti.shape())?;
            let (c_out, kh, kw) = match *tk.shape() {
                [ci, co, kh, kw] if ci == c => (co, kh, kw),
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "conv2d_transpose",
                        lhs: ti.shape().to_vec(),
                        rhs: tk.shape().to_vec(),
                    })
                }
            };
            let grow = |n: usize, k: usize| ((n - 1) * stride + k).checked_sub(2 * padding).filter(|&v| v > 0);
            let (Some(oh), Some(ow)) = (grow(h, kh), grow(w, kw)) else {
                return Err(Error::Shape {
                    op: "conv2d_transpose",
                    detail: format!("padding {padding} consumes the whole output"),
                });
            };
            // Geometry of the forward convolution this op is the adjoint of.
            let geom = ConvGeom {
                c_in: c_out,
                h: oh,
                w: ow,
                c_out: c,
                kh,
                kw,
                stride,
                pad: padding,
                oh: h,
                ow: w,
            };
            let data = kernels::conv_backward_input(ti.data(), tk.data(), &geom);
            (Tensor::new(vec![c_out, oh, ow], data)?, geom)
        };
        self.push(
            out,
            Op::ConvTranspose2d { input, kernel, geom },
            self.needs_grad(&[input, kernel]),
        )
    }

    /// Windowed pooling over `[C,H,W]` with floor semantics:
    /// output extent is `(H - window) / stride + 1`; trailing rows/columns
    /// that do not fill a window are dropped.
    pub fn pool(&self, input: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument("pool window and stride must be positive".into()));
        }
        let (out, geom, argmax) = {
            let t = &self.nodes.borrow()[input.0].value;
            let (c, h, w) = image_dims("pool", t.shape())?;
            if window > h || window > w {
                return Err(Error::Shape {
                    op: "pool",
                    detail: format!("window {window} larger than {h}x{w}"),
                });
            }
            let geom = PoolGeom {
                c,
                h,
                w,
                window,
                stride,
                oh: (h - window) / stride + 1,
                ow: (w - window) / stride + 1,
            };
            let d = t.data();
            let mut data = Vec::with_capacity(c * geom.oh * geom.ow);
            let mut argmax = Vec::new();
            for ch in 0..c {
                for oy in 0..geom.oh {
                    for ox in 0..geom.ow {
                        let mut best = (f64::NEG_INFINITY, 0usize);
                        let mut acc = 0.0f64;
                        for i in 0..window {
                            for j in 0..window {
                                let idx = (ch * h + oy * stride + i) * w + ox * stride + j;
                                if d[idx] > best.0 {
                                    best = (d[idx], idx);
                                }
                                acc += d[idx];
                            }
                        }
                        match kind {
                            PoolKind::Max => {
                                data.push(best.0);
                                argmax.push(best.1);
                            }
                            PoolKind::Avg => data.push(acc / (window * window) as f64),
                        }
                    }
                }
            }
            (Tensor::new(vec![c, geom.oh, geom.ow], data)?, geom, argmax)
        };
        self.push(
            out,
            Op::Pool {
                input,
                kind,
                geom,
                argmax,
            },
            self.needs_grad(&[input]),
        )
    }

    /// `[C,H,W] -> [C,1,1]`.
    pub fn global_pool(&self, input: Var, kind: PoolKind) -> Result<Var> {
        let (out, argmax) = {
            let t = &self.nodes.borrow()[input.0].value;
            let (c, h, w) = image_dims("global_pool", t.shape())?;
            let plane = h * w;
            let mut data = Vec::with_capacity(c);
            let mut argmax = Vec::new();
            for ch in 0..c {
                let xs = &t.data()[ch * plane..(ch + 1) * plane];
                match kind {
                    PoolKind::Max => {
                        let (i, v) = first_max(xs);
                        data.push(v);
                        argmax.push(ch * plane + i);
                    }
                    PoolKind::Avg => {
                        let s: f64 = xs.iter().copied().sum();
                        data.push(s / plane as f64);
                    }
                }
            }
            (Tensor::new(vec![c, 1, 1], data)?, argmax)
        };
        self.push(out, Op::GlobalPool { input, kind, argmax }, self.needs_grad(&[input]))
    }

    /// Reduction across channels: `[C,H,W] -> [1,H,W]`.
    pub fn channel_pool(&self, input: Var, kind: PoolKind) -> Result<Var> {
        let (out, argmax) = {
            let t = &self.nodes.borrow()[input.0].value;
            let (c, h, w) = image_dims("channel_pool", t.shape())?;
            if c == 0 {
                return Err(Error::Shape {
                    op: "channel_pool",
                    detail: "zero channels".into(),
                });
            }
            let plane = h * w;
            let d = t.data();
            let mut data = Vec::with_capacity(plane);
            let mut argmax = Vec::new();
            for p in 0..plane {
                match kind {
                    PoolKind::Max => {
                        let mut best = (d[p], p);
                        for ch in 1..c {
                            let idx = ch * plane + p;
                            if d[idx] > best.0 {
                                best = (d[idx], idx);
                            }
                        }
                        data.push(best.0);
                        argmax.push(best.1);
                    }
                    PoolKind::Avg => {
                        let s: f64 = (0..c).map(|ch| d[ch * plane + p]).sum();
                        data.push(s / c as f64);
                    }
                }
            }
            (Tensor::new(vec![1, h, w], data)?, argmax)
        };
        self.push(out, Op::ChannelPool { input, kind, argmax }, self.needs_grad(&[input]))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes.borrow()[a.0].value;
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.unary(a, |v| v.max(0.0));
        self.push(out, Op::Relu(a), self.needs_grad(&[a]))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let out = self.unary(a, sigmoid);
        self.push(out, Op::Sigmoid(a), self.needs_grad(&[a]))
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let out = {
            let t = &self.nodes.borrow()[a.0].value;
            if axis >= t.shape().len() {
                return Err(Error::Shape {
                    op: "softmax",
                    detail: format!("axis {axis} out of range for {:?}", t.shape()),
                });
            }
            let (outer, n, inner) = split_axis(t.shape(), axis);
            let d = t.data();
            let mut data = vec![0.0f64; d.len()];
            let mut buf = vec![0.0f64; n];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let max = (0..n).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for (j, b) in buf.iter_mut().enumerate() {
                        *b = (d[at(j)] - max).exp();
                        z += *b;
                    }
                    for (j, b) in buf.iter().enumerate() {
                        data[at(j)] = b / z;
                    }
                }
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        self.push(out, Op::Softmax { input: a, axis }, self.needs_grad(&[a]))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` so evaluation
    /// mode is the identity.
    pub fn dropout(&self, a: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} must lie in [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let (out, mask) = {
            let t = &self.nodes.borrow()[a.0].value;
            let mask: Vec<f64> = (0..t.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (Tensor::new(t.shape().to_vec(), data)?, mask)
        };
        self.push(out, Op::Dropout { input: a, mask }, self.needs_grad(&[a]))
    }

    /// `(1/N) Σ (pred - target)²` over all N elements.
    pub fn mse_loss(&self, pred: Var, target: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (p, t) = (&nodes[pred.0].value, &nodes[target.0].value);
            if p.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "mse_loss",
                    lhs: p.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            let s: f64 = p
                .data()
                .iter()
                .zip(t.data())
                .map(|(&a, &b)| {
                    let d = a - b;
                    d * d
                })
                .sum();
            Tensor::scalar(s / p.len() as f64)
        };
        self.push(out, Op::Mse(pred, target), self.needs_grad(&[pred, target]))
    }

    /// `-(1/N) Σ log max(P[i, label_i], 1e-12)` over the rows of `probs [N,C]`.
    pub fn cross_entropy(&self, probs: Var, labels: &[usize]) -> Result<Var> {
        let out = {
            let t = &self.nodes.borrow()[probs.0].value;
            let (n, c) = match *t.shape() {
                [n, c] if n == labels.len() => (n, c),
                _ => {
                    return Err(Error::Shape {
                        op: "cross_entropy",
                        detail: format!("probs {:?} with {} labels", t.shape(), labels.len()),
                    })
                }
            };
            let mut s = 0.0f64;
            for (i, &y) in labels.iter().enumerate() {
                if y >= c {
                    return Err(Error::LabelOutOfRange { label: y, classes: c });
                }
                s -= t.data()[i * c + y].max(LOG_EPS).ln();
            }
            Tensor::scalar(s / n as f64)
        };
        self.push(
            out,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            self.needs_grad(&[probs]),
        )
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {shape:?}"),
            });
        }
        self.backward_with(loss, Tensor::full(&shape, 1.0))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[output.0].value.shape() != seed.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: nodes[output.0].value.shape().to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut visited = Vec::new();
        grads[output.0] = Some(seed.into_data());

        let accumulate = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, g: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        };

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            let node = &nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, kernels::matmul_grad_lhs(&g, tb.data(), m, k, n));
                    }
                    if nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, kernels::matmul_grad_rhs(ta.data(), &g, m, k, n));
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if nodes[v.0].requires_grad {
                            let t = &nodes[v.0].value;
                            let index = broadcast_index(t.shape(), out.shape());
                            accumulate(&mut grads, *v, reduce_to(&g, &index, t.len()));
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ia = broadcast_index(ta.shape(), out.shape());
                    let ib = broadcast_index(tb.shape(), out.shape());
                    if nodes[a.0].requires_grad {
                        let prod: Vec<f64> = g.iter().zip(&ib).map(|(&gv, &j)| gv * tb.data()[j]).collect();
                        accumulate(&mut grads, *a, reduce_to(&prod, &ia, ta.len()));
                    }
                    if nodes[b.0].requires_grad {
                        let prod: Vec<f64> = g.iter().zip(&ia).map(|(&gv, &i)| gv * ta.data()[i]).collect();
                        accumulate(&mut grads, *b, reduce_to(&prod, &ib, tb.len()));
                    }
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.iter().map(|&v| v * s).collect());
                }
                Op::Sum(a) => {
                    let n = nodes[a.0].value.len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g),
                Op::Concat { inputs, axis } => {
                    let shape = out.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut parts: Vec<Vec<f64>> = inputs
                        .iter()
                        .map(|v| Vec::with_capacity(nodes[v.0].value.len()))
                        .collect();
                    let mut offset = 0;
                    for _ in 0..outer {
                        for (v, part) in inputs.iter().zip(parts.iter_mut()) {
                            let chunk = nodes[v.0].value.shape()[*axis] * inner;
                            part.extend_from_slice(&g[offset..offset + chunk]);
                            offset += chunk;
                        }
                    }
                    for (v, part) in inputs.iter().zip(parts) {
                        accumulate(&mut grads, *v, part);
                    }
                }
                Op::Conv2d { input, kernel, geom } => {
                    let (ti, tk) = (&nodes[input.0].value, &nodes[kernel.0].value);
                    if nodes[input.0].requires_grad {
                        accumulate(&mut grads, *input, kernels::conv_backward_input(&g, tk.data(), geom));
                    }
                    if nodes[kernel.0].requires_grad {
                        accumulate(&mut grads, *kernel, kernels::conv_backward_kernel(ti.data(), &g, geom));
                    }
                }
                Op::ConvTranspose2d { input, kernel, geom } => {
                    let (ti, tk) = (&nodes[input.0].value, &nodes[kernel.0].value);
                    if nodes[input.0].requires_grad {
                        accumulate(&mut grads, *input, kernels::conv_forward(&g, tk.data(), geom));
                    }
                    if nodes[kernel.0].requires_grad {
                        accumulate(&mut grads, *kernel, kernels::conv_backward_kernel(&g, ti.data(), geom));
                    }
                }
                Op::Pool {
                    input,
                    kind,
                    geom,
                    argmax,
                } => {
                    let mut gi = vec![0.0f64; geom.c * geom.h * geom.w];
                    match kind {
                        PoolKind::Max => {
                            for (&gv, &i) in g.iter().zip(argmax) {
                                gi[i] += gv;
                            }
                        }
                        PoolKind::Avg => {
                            let area = (geom.window * geom.window) as f64;
                            let mut o = 0;
                            for ch in 0..geom.c {
                                for oy in 0..geom.oh {
                                    for ox in 0..geom.ow {
                                        let share = g[o] / area;
                                        o += 1;
                                        for i in 0..geom.window {
                                            for j in 0..geom.window {
                                                let y = oy * geom.stride + i;
                                                let x = ox * geom.stride + j;
                                                gi[(ch * geom.h + y) * geom.w + x] += share;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::GlobalPool { input, kind, argmax } => {
                    let t = &nodes[input.0].value;
                    let plane = t.shape()[1] * t.shape()[2];
                    let mut gi = vec![0.0f64; t.len()];
                    match kind {
                        PoolKind::Max => {
                            for (&gv, &i) in g.iter().zip(argmax) {
                                gi[i] = gv;
                            }
                        }
                        PoolKind::Avg => {
                            for (ch, &gv) in g.iter().enumerate() {
                                let share = gv / plane as f64;
                                gi[ch * plane..(ch + 1) * plane].fill(share);
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::ChannelPool { input, kind, argmax } => {
                    let t = &nodes[input.0].value;
                    let c = t.shape()[0];
                    let plane = t.len() / c;
                    let mut gi = vec![0.0f64; t.len()];
                    match kind {
                        PoolKind::Max => {
                            for (&gv, &i) in g.iter().zip(argmax) {
                                gi[i] = gv;
                            }
                        }
                        PoolKind::Avg => {
                            for (p, &gv) in g.iter().enumerate() {
                                let share = gv / c as f64;
                                for ch in 0..c {
                                    gi[ch * plane + p] = share;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Relu(a) => {
                    let x = nodes[a.0].value.data();
                    let gi = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, gi);
                }
                Op::Sigmoid(a) => {
                    let gi = g.iter().zip(out.data()).map(|(&gv, &y)| gv * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, gi);
                }
                Op::Softmax { input, axis } => {
                    let (outer, n, inner) = split_axis(out.shape(), *axis);
                    let y = out.data();
                    let mut gi = vec![0.0f64; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let s: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                gi[at(j)] = y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Dropout { input, mask } => {
                    accumulate(&mut grads, *input, g.iter().zip(mask).map(|(a, m)| a * m).collect());
                }
                Op::Mse(p, t) => {
                    let (tp, tt) = (&nodes[p.0].value, &nodes[t.0].value);
                    let scale = 2.0 * g[0] / tp.len() as f64;
                    let diff: Vec<f64> = tp
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(&a, &b)| scale * (a - b))
                        .collect();
                    if nodes[p.0].requires_grad {
                        accumulate(&mut grads, *p, diff.to_vec());
                    }
                    if nodes[t.0].requires_grad {
                        accumulate(&mut grads, *t, diff.iter().map(|&d| -d).collect());
                    }
                }
                Op::CrossEntropy { probs, labels } => {
                    let t = &nodes[probs.0].value;
                    let c = t.shape()[1];
                    let n = labels.len() as f64;
                    let mut gi = vec![0.0f64; t.len()];
                    for (i, &y) in labels.iter().enumerate() {
                        let p = t.data()[i * c + y];
                        if p > LOG_EPS {
                            gi[i * c + y] = -g[0] / (n * p);
                        }
                    }
                    accumulate(&mut grads, *probs, gi);
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| matches!(nodes[i].op, Op::Leaf)).map(|g| Tensor {
                    shape: nodes[i].value.shape().to_vec(),
                    data: g,
                })
            })
            .collect();
        Ok(Gradients { grads, visited })
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// First index of the maximum value.
fn first_max(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, xs[0]);
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
