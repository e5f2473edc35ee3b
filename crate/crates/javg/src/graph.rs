//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] owns a vector of nodes in construction order, which is also a
//! topological order, so the backward pass is a single reverse sweep with one
//! vector-Jacobian product per op. Values are checked finite as each node is
//! created; a NaN or Inf surfaces immediately with the op name.
//!
//! Convolution conventions, fixed for the whole crate:
//!
//! - Strided convolution requires `stride | extent` on every spatial axis and
//!   `kernel >= stride`. Left padding is `(kernel - stride) / 2` per axis
//!   (integer division), so the output extent is `extent / stride`.
//! - 1-D convolutions pad by boundary reflection (`x[-i] = x[i]`), so a
//!   constant signal stays exactly constant through the layer. 2-D and 3-D
//!   convolutions pad with zeros.
//! - Transposed convolution is the adjoint index map of the zero-padded
//!   convolution: output extent is exactly `stride * extent`, out-of-range
//!   contributions are dropped.
//!
//! Weight layout is `[c_out, c_in, kernel...]` for both directions.

use crate::error::{JavgError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a * x + b, elementwise.
    Affine { x: NodeId, a: f64, b: f64 },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// w: [m, k] times x: [k] -> [m].
    MatVec { w: NodeId, x: NodeId },
    /// x: [c, ...] plus per-channel bias b: [c].
    AddBias { x: NodeId, b: NodeId },
    Conv1d { x: NodeId, w: NodeId, stride: usize },
    ConvT1d { x: NodeId, w: NodeId, stride: usize },
    Conv2d { x: NodeId, w: NodeId, stride: (usize, usize) },
    ConvT2d { x: NodeId, w: NodeId, stride: (usize, usize) },
    Conv3d { x: NodeId, w: NodeId, stride: (usize, usize, usize) },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Clamp(NodeId, f64, f64),
    Mean(NodeId),
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    /// Index map over the last axis: out[.., t] = x[.., map[t]].
    GatherLast { x: NodeId, map: Vec<usize> },
    /// Pick one element of a vector as a scalar.
    Index(NodeId, usize),
    LogSoftmax(NodeId),
    /// Mean over all non-channel axes: [c, ...] -> [c].
    ChannelMean(NodeId),
    /// Stack same-shaped [c, ...] tensors along a new axis 1: -> [c, k, ...].
    StackAxis1(Vec<NodeId>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Constant input; gradients are not tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, false, Op::Leaf)
    }

    /// Trainable input; backward will produce a gradient for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_unchecked(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, op_name: &str) -> Result<NodeId> {
        value
            .check_finite(op_name)
            .map_err(|e| JavgError::numeric(format!("{op_name}: {e}")))?;
        let requires_grad = self.op_inputs(&op).iter().any(|id| self.requires(*id));
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn op_inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Affine { x, .. }
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Ln(x)
            | Op::Clamp(x, _, _)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::GatherLast { x, .. }
            | Op::Index(x, _)
            | Op::LogSoftmax(x)
            | Op::ChannelMean(x) => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::StackAxis1(xs) => xs.clone(),
            Op::MatVec { w, x } => vec![*w, *x],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::Conv1d { x, w, .. }
            | Op::ConvT1d { x, w, .. }
            | Op::Conv2d { x, w, .. }
            | Op::ConvT2d { x, w, .. }
            | Op::Conv3d { x, w, .. } => vec![*x, *w],
            Op::Concat(xs) => xs.clone(),
        }
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|t| a * t + b).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Affine { x, a, b }, "affine")
    }

    /// 1 - x, the complement used throughout the value functions.
    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -1.0, 1.0)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(JavgError::invalid(format!(
                "add shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(JavgError::invalid(format!(
                "sub shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(JavgError::invalid(format!(
                "mul shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|t| t.max(0.0)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> Result<NodeId> {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&t| if t > 0.0 { t } else { alpha * t })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::LeakyRelu(x, alpha), "leaky_relu")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|t| t.tanh()).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Tanh(x), "tanh")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&t| {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|t| t.ln()).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Ln(x), "ln")
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|t| t.clamp(lo, hi)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Clamp(x, lo, hi), "clamp")
    }

    // ── reductions and shape ops ─────────────────────────────────────

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), "mean")
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(JavgError::invalid("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for id in xs {
            data.extend_from_slice(self.value(*id).data());
        }
        let out = Tensor::from_vec(data);
        self.push(out, Op::Concat(xs.to_vec()), "concat")
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(x).reshaped(shape)?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    pub fn gather_last(&mut self, x: NodeId, map: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x);
        let last = *v.shape().last().expect("tensor has at least one axis");
        if map.iter().any(|&i| i >= last) {
            return Err(JavgError::invalid(format!(
                "gather_last index out of range (axis extent {last})"
            )));
        }
        let rows = v.len() / last;
        let mut data = Vec::with_capacity(rows * map.len());
        for r in 0..rows {
            let row = &v.data()[r * last..(r + 1) * last];
            data.extend(map.iter().map(|&i| row[i]));
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = map.len();
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::GatherLast { x, map }, "gather_last")
    }

    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let v = self.value(x);
        if i >= v.len() {
            return Err(JavgError::invalid(format!(
                "index {i} out of range for {} values",
                v.len()
            )));
        }
        let out = Tensor::scalar(v.data()[i]);
        self.push(out, Op::Index(x, i), "index")
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 1 {
            return Err(JavgError::invalid("log_softmax expects a vector"));
        }
        let max = v.data().iter().fold(f64::NEG_INFINITY, |m, &t| m.max(t));
        let logsum = v.data().iter().map(|t| (t - max).exp()).sum::<f64>().ln() + max;
        let data = v.data().iter().map(|t| t - logsum).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::LogSoftmax(x), "log_softmax")
    }

    /// Global average over every non-channel axis: [c, ...] -> [c].
    pub fn channel_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let c = v.shape()[0];
        let span = v.len() / c;
        let data = (0..c)
            .map(|ch| v.data()[ch * span..(ch + 1) * span].iter().sum::<f64>() / span as f64)
            .collect();
        let out = Tensor::new(vec![c], data)?;
        self.push(out, Op::ChannelMean(x), "channel_mean")
    }

    /// Stack k tensors of shape [c, rest...] into [c, k, rest...].
    pub fn stack_axis1(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(JavgError::invalid("stack_axis1 of zero tensors"));
        }
        let first = self.value(xs[0]).shape().to_vec();
        for id in xs {
            if self.value(*id).shape() != first.as_slice() {
                return Err(JavgError::invalid(format!(
                    "stack_axis1 shape mismatch: {:?} vs {:?}",
                    self.value(*id).shape(),
                    first
                )));
            }
        }
        let c = first[0];
        let span = self.value(xs[0]).len() / c;
        let k = xs.len();
        let mut data = vec![0.0; c * k * span];
        for (i, id) in xs.iter().enumerate() {
            let v = self.value(*id);
            for ch in 0..c {
                let src = &v.data()[ch * span..(ch + 1) * span];
                let dst = &mut data[(ch * k + i) * span..(ch * k + i + 1) * span];
                dst.copy_from_slice(src);
            }
        }
        let mut shape = vec![c, k];
        shape.extend_from_slice(&first[1..]);
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::StackAxis1(xs.to_vec()), "stack_axis1")
    }

    // ── linear layers ────────────────────────────────────────────────

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (vw, vx) = (self.value(w), self.value(x));
        let (m, k) = match vw.shape() {
            [m, k] => (*m, *k),
            s => {
                return Err(JavgError::invalid(format!(
                    "matvec weight must be rank 2, got {s:?}"
                )))
            }
        };
        if vx.shape() != [k] {
            return Err(JavgError::invalid(format!(
                "matvec shape mismatch: [{m}, {k}] x {:?}",
                vx.shape()
            )));
        }
        let mut data = vec![0.0; m];
        for (i, slot) in data.iter_mut().enumerate() {
            let row = &vw.data()[i * k..(i + 1) * k];
            *slot = row.iter().zip(vx.data()).map(|(a, b)| a * b).sum();
        }
        let out = Tensor::new(vec![m], data)?;
        self.push(out, Op::MatVec { w, x }, "matvec")
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(b));
        let c = vx.shape()[0];
        if vb.shape() != [c] {
            return Err(JavgError::invalid(format!(
                "add_bias: bias {:?} does not match channel extent {c}",
                vb.shape()
            )));
        }
        let span = vx.len() / c;
        let mut data = vx.data().to_vec();
        for ch in 0..c {
            let bv = vb.data()[ch];
            for t in data[ch * span..(ch + 1) * span].iter_mut() {
                *t += bv;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(out, Op::AddBias { x, b }, "add_bias")
    }

    /// Dense layer on a vector: w[m, k] * x[k] + b[m].
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matvec(w, x)?;
        self.add(h, b)
    }

    // ── convolutions ─────────────────────────────────────────────────

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (c_in, l) = expect_rank2("conv1d input", vx.shape())?;
        let (c_out, wc_in, k) = expect_rank3("conv1d weight", vw.shape())?;
        check_conv_axis("conv1d", l, stride, k)?;
        if wc_in != c_in {
            return Err(JavgError::invalid(format!(
                "conv1d channel mismatch: input {c_in}, weight expects {wc_in}"
            )));
        }
        let l_out = l / stride;
        let pad = (k - stride) / 2;
        if k - stride - pad >= l {
            return Err(JavgError::invalid(format!(
                "conv1d input length {l} too short to reflect-pad kernel {k}"
            )));
        }
        let mut out = vec![0.0; c_out * l_out];
        conv1d_forward(
            vx.data(),
            vw.data(),
            &mut out,
            c_in,
            l,
            c_out,
            k,
            stride,
            pad,
        );
        let out = Tensor::new(vec![c_out, l_out], out)?;
        self.push(out, Op::Conv1d { x, w, stride }, "conv1d")
    }

    pub fn conv_transpose1d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (c_in, l) = expect_rank2("conv_transpose1d input", vx.shape())?;
        let (c_out, wc_in, k) = expect_rank3("conv_transpose1d weight", vw.shape())?;
        if k < stride {
            return Err(JavgError::invalid(format!(
                "conv_transpose1d kernel {k} smaller than stride {stride}"
            )));
        }
        if wc_in != c_in {
            return Err(JavgError::invalid(format!(
                "conv_transpose1d channel mismatch: input {c_in}, weight expects {wc_in}"
            )));
        }
        let l_out = l * stride;
        let pad = (k - stride) / 2;
        let mut out = vec![0.0; c_out * l_out];
        convt1d_forward(
            vx.data(),
            vw.data(),
            &mut out,
            c_in,
            l,
            c_out,
            k,
            stride,
            pad,
        );
        let out = Tensor::new(vec![c_out, l_out], out)?;
        self.push(out, Op::ConvT1d { x, w, stride }, "conv_transpose1d")
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: (usize, usize)) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (c_in, h, wd) = expect_rank3("conv2d input", vx.shape())?;
        let s = vw.shape();
        if s.len() != 4 {
            return Err(JavgError::invalid(format!(
                "conv2d weight must be rank 4, got {s:?}"
            )));
        }
        let (c_out, wc_in, kh, kw) = (s[0], s[1], s[2], s[3]);
        check_conv_axis("conv2d height", h, stride.0, kh)?;
        check_conv_axis("conv2d width", wd, stride.1, kw)?;
        if wc_in != c_in {
            return Err(JavgError::invalid(format!(
                "conv2d channel mismatch: input {c_in}, weight expects {wc_in}"
            )));
        }
        let (h_out, w_out) = (h / stride.0, wd / stride.1);
        let pad = ((kh - stride.0) / 2, (kw - stride.1) / 2);
        let mut out = vec![0.0; c_out * h_out * w_out];
        conv2d_forward(
            vx.data(),
            vw.data(),
            &mut out,
            [c_in, h, wd],
            [c_out, kh, kw],
            [stride.0, stride.1],
            [pad.0, pad.1],
        );
        let out = Tensor::new(vec![c_out, h_out, w_out], out)?;
        self.push(out, Op::Conv2d { x, w, stride }, "conv2d")
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: (usize, usize),
    ) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (c_in, h, wd) = expect_rank3("conv_transpose2d input", vx.shape())?;
        let s = vw.shape();
        if s.len() != 4 {
            return Err(JavgError::invalid(format!(
                "conv_transpose2d weight must be rank 4, got {s:?}"
            )));
        }
        let (c_out, wc_in, kh, kw) = (s[0], s[1], s[2], s[3]);
        if kh < stride.0 || kw < stride.1 {
            return Err(JavgError::invalid(
                "conv_transpose2d kernel smaller than stride",
            ));
        }
        if wc_in != c_in {
            return Err(JavgError::invalid(format!(
                "conv_transpose2d channel mismatch: input {c_in}, weight expects {wc_in}"
            )));
        }
        let (h_out, w_out) = (h * stride.0, wd * stride.1);
        let pad = ((kh - stride.0) / 2, (kw - stride.1) / 2);
        let mut out = vec![0.0; c_out * h_out * w_out];
        convt2d_forward(
            vx.data(),
            vw.data(),
            &mut out,
            [c_in, h, wd],
            [c_out, kh, kw],
            [stride.0, stride.1],
            [pad.0, pad.1],
        );
        let out = Tensor::new(vec![c_out, h_out, w_out], out)?;
        self.push(out, Op::ConvT2d { x, w, stride }, "conv_transpose2d")
    }

    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: (usize, usize, usize),
    ) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let sx = vx.shape();
        if sx.len() != 4 {
            return Err(JavgError::invalid(format!(
                "conv3d input must be rank 4, got {sx:?}"
            )));
        }
        let (c_in, t, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let sw = vw.shape();
        if sw.len() != 5 {
            return Err(JavgError::invalid(format!(
                "conv3d weight must be rank 5, got {sw:?}"
            )));
        }
        let (c_out, wc_in, kt, kh, kw) = (sw[0], sw[1], sw[2], sw[3], sw[4]);
        check_conv_axis("conv3d time", t, stride.0, kt)?;
        check_conv_axis("conv3d height", h, stride.1, kh)?;
        check_conv_axis("conv3d width", wd, stride.2, kw)?;
        if wc_in != c_in {
            return Err(JavgError::invalid(format!(
                "conv3d channel mismatch: input {c_in}, weight expects {wc_in}"
            )));
        }
        let (t_out, h_out, w_out) = (t / stride.0, h / stride.1, wd / stride.2);
        let pad = (
            (kt - stride.0) / 2,
            (kh - stride.1) / 2,
            (kw - stride.2) / 2,
        );
        let mut out = vec![0.0; c_out * t_out * h_out * w_out];
        conv3d_forward(
            vx.data(),
            vw.data(),
            &mut out,
            [c_in, t, h, wd],
            [c_out, kt, kh, kw],
            [stride.0, stride.1, stride.2],
            [pad.0, pad.1, pad.2],
        );
        let out = Tensor::new(vec![c_out, t_out, h_out, w_out], out)?;
        self.push(out, Op::Conv3d { x, w, stride }, "conv3d")
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns one gradient slot per node;
    /// slots for nodes that do not require gradients stay `None`.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(JavgError::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.requires(loss) {
            return Err(JavgError::invalid(
                "backward: loss does not depend on any parameter",
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(gy);
                continue;
            }
            self.vjp(idx, &gy, &mut grads)?;
        }
        Ok(grads)
    }

    pub fn grad_of<'g>(&self, grads: &'g [Option<Tensor>], id: NodeId) -> Option<&'g Tensor> {
        grads[id.0].as_ref()
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
        if !self.requires(id) {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn vjp(&self, idx: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => unreachable!("leaf handled in backward"),
            Op::Affine { x, a, .. } => {
                let gx = scale(gy, *a);
                self.accumulate(grads, *x, gx)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone())?;
                self.accumulate(grads, *b, gy.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone())?;
                self.accumulate(grads, *b, scale(gy, -1.0))?;
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let gx = hadamard(gy, self.value(*b));
                    self.accumulate(grads, *a, gx)?;
                }
                if self.requires(*b) {
                    let gx = hadamard(gy, self.value(*a));
                    self.accumulate(grads, *b, gx)?;
                }
            }
            Op::MatVec { w, x } => {
                let vw = self.value(*w);
                let vx = self.value(*x);
                let (m, k) = (vw.shape()[0], vw.shape()[1]);
                if self.requires(*w) {
                    let mut gw = vec![0.0; m * k];
                    for i in 0..m {
                        let gyi = gy.data()[i];
                        let row = &mut gw[i * k..(i + 1) * k];
                        for (slot, xv) in row.iter_mut().zip(vx.data()) {
                            *slot = gyi * xv;
                        }
                    }
                    self.accumulate(grads, *w, Tensor::new(vec![m, k], gw)?)?;
                }
                if self.requires(*x) {
                    let mut gx = vec![0.0; k];
                    for i in 0..m {
                        let gyi = gy.data()[i];
                        let row = &vw.data()[i * k..(i + 1) * k];
                        for (slot, wv) in gx.iter_mut().zip(row) {
                            *slot += gyi * wv;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![k], gx)?)?;
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(grads, *x, gy.clone())?;
                if self.requires(*b) {
                    let c = self.value(*b).len();
                    let span = gy.len() / c;
                    let mut gb = vec![0.0; c];
                    for (ch, slot) in gb.iter_mut().enumerate() {
                        *slot = gy.data()[ch * span..(ch + 1) * span].iter().sum();
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![c], gb)?)?;
                }
            }
            Op::Conv1d { x, w, stride } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (c_in, l) = (vx.shape()[0], vx.shape()[1]);
                let (c_out, k) = (vw.shape()[0], vw.shape()[2]);
                let pad = (k - stride) / 2;
                let need_x = self.requires(*x);
                let need_w = self.requires(*w);
                let mut gx = vec![0.0; if need_x { c_in * l } else { 0 }];
                let mut gw = vec![0.0; if need_w { c_out * c_in * k } else { 0 }];
                conv1d_backward(
                    vx.data(),
                    vw.data(),
                    gy.data(),
                    if need_x { Some(&mut gx) } else { None },
                    if need_w { Some(&mut gw) } else { None },
                    c_in,
                    l,
                    c_out,
                    k,
                    *stride,
                    pad,
                );
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(vec![c_in, l], gx)?)?;
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(vec![c_out, c_in, k], gw)?)?;
                }
            }
            Op::ConvT1d { x, w, stride } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (c_in, l) = (vx.shape()[0], vx.shape()[1]);
                let (c_out, k) = (vw.shape()[0], vw.shape()[2]);
                let pad = (k - stride) / 2;
                let need_x = self.requires(*x);
                let need_w = self.requires(*w);
                let mut gx = vec![0.0; if need_x { c_in * l } else { 0 }];
                let mut gw = vec![0.0; if need_w { c_out * c_in * k } else { 0 }];
                convt1d_backward(
                    vx.data(),
                    vw.data(),
                    gy.data(),
                    if need_x { Some(&mut gx) } else { None },
                    if need_w { Some(&mut gw) } else { None },
                    c_in,
                    l,
                    c_out,
                    k,
                    *stride,
                    pad,
                );
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(vec![c_in, l], gx)?)?;
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(vec![c_out, c_in, k], gw)?)?;
                }
            }
            Op::Conv2d { x, w, stride } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let xs = [vx.shape()[0], vx.shape()[1], vx.shape()[2]];
                let ws = [vw.shape()[0], vw.shape()[2], vw.shape()[3]];
                let strides = [stride.0, stride.1];
                let pads = [(ws[1] - stride.0) / 2, (ws[2] - stride.1) / 2];
                let need_x = self.requires(*x);
                let need_w = self.requires(*w);
                let mut gx = vec![0.0; if need_x { vx.len() } else { 0 }];
                let mut gw = vec![0.0; if need_w { vw.len() } else { 0 }];
                conv2d_backward(
                    vx.data(),
                    vw.data(),
                    gy.data(),
                    if need_x { Some(&mut gx) } else { None },
                    if need_w { Some(&mut gw) } else { None },
                    xs,
                    ws,
                    strides,
                    pads,
                );
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx)?)?;
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(vw.shape().to_vec(), gw)?)?;
                }
            }
            Op::ConvT2d { x, w, stride } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let xs = [vx.shape()[0], vx.shape()[1], vx.shape()[2]];
                let ws = [vw.shape()[0], vw.shape()[2], vw.shape()[3]];
                let strides = [stride.0, stride.1];
                let pads = [(ws[1] - stride.0) / 2, (ws[2] - stride.1) / 2];
                let need_x = self.requires(*x);
                let need_w = self.requires(*w);
                let mut gx = vec![0.0; if need_x { vx.len() } else { 0 }];
                let mut gw = vec![0.0; if need_w { vw.len() } else { 0 }];
                convt2d_backward(
                    vx.data(),
                    vw.data(),
                    gy.data(),
                    if need_x { Some(&mut gx) } else { None },
                    if need_w { Some(&mut gw) } else { None },
                    xs,
                    ws,
                    strides,
                    pads,
                );
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx)?)?;
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(vw.shape().to_vec(), gw)?)?;
                }
            }
            Op::Conv3d { x, w, stride } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let xs = [
                    vx.shape()[0],
                    vx.shape()[1],
                    vx.shape()[2],
                    vx.shape()[3],
                ];
                let ws = [
                    vw.shape()[0],
                    vw.shape()[2],
                    vw.shape()[3],
                    vw.shape()[4],
                ];
                let strides = [stride.0, stride.1, stride.2];
                let pads = [
                    (ws[1] - stride.0) / 2,
                    (ws[2] - stride.1) / 2,
                    (ws[3] - stride.2) / 2,
                ];
                let need_x = self.requires(*x);
                let need_w = self.requires(*w);
                let mut gx = vec![0.0; if need_x { vx.len() } else { 0 }];
                let mut gw = vec![0.0; if need_w { vw.len() } else { 0 }];
                conv3d_backward(
                    vx.data(),
                    vw.data(),
                    gy.data(),
                    if need_x { Some(&mut gx) } else { None },
                    if need_w { Some(&mut gw) } else { None },
                    xs,
                    ws,
                    strides,
                    pads,
                );
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx)?)?;
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(vw.shape().to_vec(), gw)?)?;
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                let data = gy
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &t)| if t > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), data)?)?;
            }
            Op::LeakyRelu(x, alpha) => {
                let vx = self.value(*x);
                let data = gy
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &t)| if t > 0.0 { *g } else { alpha * g })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), data)?)?;
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let data = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, &t)| g * (1.0 - t * t))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?)?;
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let data = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, &t)| g * t * (1.0 - t))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?)?;
            }
            Op::Ln(x) => {
                let vx = self.value(*x);
                let data = gy
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &t)| g / t)
                    .collect();
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), data)?)?;
            }
            Op::Clamp(x, lo, hi) => {
                let vx = self.value(*x);
                let data = gy
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &t)| if t >= *lo && t <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), data)?)?;
            }
            Op::Mean(x) => {
                let vx = self.value(*x);
                let g = gy.data()[0] / vx.len() as f64;
                self.accumulate(grads, *x, Tensor::filled(vx.shape().to_vec(), g))?;
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for id in xs {
                    let n = self.value(*id).len();
                    if self.requires(*id) {
                        let seg = gy.data()[offset..offset + n].to_vec();
                        let shape = self.value(*id).shape().to_vec();
                        self.accumulate(grads, *id, Tensor::new(shape, seg)?)?;
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, gy.reshaped(shape)?)?;
            }
            Op::GatherLast { x, map } => {
                let vx = self.value(*x);
                let last = *vx.shape().last().unwrap();
                let rows = vx.len() / last;
                let t_out = map.len();
                let mut gx = vec![0.0; vx.len()];
                for r in 0..rows {
                    let grow = &gy.data()[r * t_out..(r + 1) * t_out];
                    let xrow = &mut gx[r * last..(r + 1) * last];
                    for (t, &src) in map.iter().enumerate() {
                        xrow[src] += grow[t];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx)?)?;
            }
            Op::Index(x, i) => {
                let vx = self.value(*x);
                let mut gx = vec![0.0; vx.len()];
                gx[*i] = gy.data()[0];
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx)?)?;
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let gsum: f64 = gy.data().iter().sum();
                let data = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, &t)| g - t.exp() * gsum)
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?)?;
            }
            Op::ChannelMean(x) => {
                let vx = self.value(*x);
                let c = vx.shape()[0];
                let span = vx.len() / c;
                let mut gx = vec![0.0; vx.len()];
                for ch in 0..c {
                    let g = gy.data()[ch] / span as f64;
                    for slot in gx[ch * span..(ch + 1) * span].iter_mut() {
                        *slot = g;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), gx)?)?;
            }
            Op::StackAxis1(xs) => {
                let member = self.value(xs[0]);
                let c = member.shape()[0];
                let span = member.len() / c;
                let k = xs.len();
                for (i, id) in xs.iter().enumerate() {
                    if !self.requires(*id) {
                        continue;
                    }
                    let mut gx = vec![0.0; member.len()];
                    for ch in 0..c {
                        let src = &gy.data()[(ch * k + i) * span..(ch * k + i + 1) * span];
                        gx[ch * span..(ch + 1) * span].copy_from_slice(src);
                    }
                    self.accumulate(
                        grads,
                        *id,
                        Tensor::new(member.shape().to_vec(), gx)?,
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn scale(t: &Tensor, a: f64) -> Tensor {
    let data = t.data().iter().map(|v| a * v).collect();
    Tensor::new(t.shape().to_vec(), data).expect("scaling a finite tensor by a finite factor")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("product of finite tensors")
}

fn expect_rank2(what: &str, s: &[usize]) -> Result<(usize, usize)> {
    match s {
        [a, b] => Ok((*a, *b)),
        _ => Err(JavgError::invalid(format!(
            "{what} must be rank 2, got {s:?}"
        ))),
    }
}

fn expect_rank3(what: &str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match s {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(JavgError::invalid(format!(
            "{what} must be rank 3, got {s:?}"
        ))),
    }
}

fn check_conv_axis(what: &str, extent: usize, stride: usize, kernel: usize) -> Result<()> {
    if stride == 0 || extent % stride != 0 {
        return Err(JavgError::invalid(format!(
            "{what}: stride {stride} must divide extent {extent}"
        )));
    }
    if kernel < stride {
        return Err(JavgError::invalid(format!(
            "{what}: kernel {kernel} smaller than stride {stride}"
        )));
    }
    Ok(())
}

/// Valid kernel range for an output position: returns (k_lo, k_hi, x_off)
/// such that input indices `x_off .. x_off + (k_hi - k_lo)` pair with kernel
/// taps `k_lo .. k_hi`.
#[inline]
fn tap_range(base: isize, extent: usize, kernel: usize) -> (usize, usize, usize) {
    let k_lo = (-base).max(0) as usize;
    let k_hi = ((extent as isize - base).min(kernel as isize)).max(0) as usize;
    if k_lo >= k_hi {
        return (0, 0, 0);
    }
    ((k_lo), (k_hi), (base + k_lo as isize) as usize)
}

/// Source index in [0, l) for a (possibly out-of-range) padded position,
/// reflecting at both boundaries.
#[inline]
fn reflect_index(mut idx: isize, l: usize) -> usize {
    let last = l as isize - 1;
    loop {
        if idx < 0 {
            idx = -idx;
        } else if idx > last {
            idx = 2 * last - idx;
        } else {
            return idx as usize;
        }
    }
}

/// Copy one channel row into a reflection-padded buffer of length
/// `pad_l + l + pad_r`.
fn fill_reflected(xrow: &[f64], padded: &mut [f64], pad_l: usize) {
    let l = xrow.len();
    for (i, slot) in padded.iter_mut().enumerate() {
        *slot = xrow[reflect_index(i as isize - pad_l as isize, l)];
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let l_out = l / stride;
    let mut padded = vec![0.0; l + k - stride];
    for ci in 0..c_in {
        fill_reflected(&x[ci * l..(ci + 1) * l], &mut padded, pad);
        for co in 0..c_out {
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            let orow = &mut out[co * l_out..(co + 1) * l_out];
            for (j, slot) in orow.iter_mut().enumerate() {
                let window = &padded[j * stride..j * stride + k];
                let mut acc = 0.0;
                for (xa, wa) in window.iter().zip(wrow) {
                    acc += xa * wa;
                }
                *slot += acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let l_out = l / stride;
    let padded_len = l + k - stride;
    let mut xpad = vec![0.0; padded_len];
    let mut gpad = vec![0.0; padded_len];
    for ci in 0..c_in {
        fill_reflected(&x[ci * l..(ci + 1) * l], &mut xpad, pad);
        gpad.iter_mut().for_each(|v| *v = 0.0);
        for co in 0..c_out {
            let widx = (co * c_in + ci) * k;
            let wrow = &w[widx..widx + k];
            let grow = &gy[co * l_out..(co + 1) * l_out];
            for (j, &g) in grow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let off = j * stride;
                if gx.is_some() {
                    for (slot, wa) in gpad[off..off + k].iter_mut().zip(wrow) {
                        *slot += g * wa;
                    }
                }
                if let Some(gw) = gw.as_deref_mut() {
                    for (slot, xa) in gw[widx..widx + k].iter_mut().zip(&xpad[off..off + k]) {
                        *slot += g * xa;
                    }
                }
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            let gxrow = &mut gx[ci * l..(ci + 1) * l];
            for (i, &g) in gpad.iter().enumerate() {
                if g != 0.0 {
                    gxrow[reflect_index(i as isize - pad as isize, l)] += g;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt1d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let l_out = l * stride;
    for co in 0..c_out {
        let orow = &mut out[co * l_out..(co + 1) * l_out];
        for ci in 0..c_in {
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            let xrow = &x[ci * l..(ci + 1) * l];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let base = (i * stride) as isize - pad as isize;
                let (k_lo, k_hi, off) = tap_range(base, l_out, k);
                let span = k_hi - k_lo;
                for (slot, wa) in orow[off..off + span].iter_mut().zip(&wrow[k_lo..k_hi]) {
                    *slot += xv * wa;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let l_out = l * stride;
    for co in 0..c_out {
        let grow = &gy[co * l_out..(co + 1) * l_out];
        for ci in 0..c_in {
            let widx = (co * c_in + ci) * k;
            let wrow = &w[widx..widx + k];
            let xrow = &x[ci * l..(ci + 1) * l];
            for i in 0..l {
                let base = (i * stride) as isize - pad as isize;
                let (k_lo, k_hi, off) = tap_range(base, l_out, k);
                let span = k_hi - k_lo;
                let gseg = &grow[off..off + span];
                if let Some(gx) = gx.as_deref_mut() {
                    let mut acc = 0.0;
                    for (ga, wa) in gseg.iter().zip(&wrow[k_lo..k_hi]) {
                        acc += ga * wa;
                    }
                    gx[ci * l + i] += acc;
                }
                if let Some(gw) = gw.as_deref_mut() {
                    let xv = xrow[i];
                    if xv != 0.0 {
                        let gwrow = &mut gw[widx + k_lo..widx + k_hi];
                        for (slot, ga) in gwrow.iter_mut().zip(gseg) {
                            *slot += xv * ga;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    [c_in, h, wd]: [usize; 3],
    [c_out, kh, kw]: [usize; 3],
    [sh, sw]: [usize; 2],
    [ph, pw]: [usize; 2],
) {
    let (h_out, w_out) = (h / sh, wd / sw);
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = ((co * c_in) + ci) * kh * kw;
            for khi in 0..kh {
                let wrow = &w[wbase + khi * kw..wbase + (khi + 1) * kw];
                for oh in 0..h_out {
                    let ih = (oh * sh + khi) as isize - ph as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xrow = &x[(ci * h + ih as usize) * wd..(ci * h + ih as usize + 1) * wd];
                    let orow = &mut out[(co * h_out + oh) * w_out..(co * h_out + oh + 1) * w_out];
                    for (ow, slot) in orow.iter_mut().enumerate() {
                        let base = (ow * sw) as isize - pw as isize;
                        let (k_lo, k_hi, off) = tap_range(base, wd, kw);
                        let mut acc = 0.0;
                        for (xa, wa) in
                            xrow[off..off + (k_hi - k_lo)].iter().zip(&wrow[k_lo..k_hi])
                        {
                            acc += xa * wa;
                        }
                        *slot += acc;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    [c_in, h, wd]: [usize; 3],
    [c_out, kh, kw]: [usize; 3],
    [sh, sw]: [usize; 2],
    [ph, pw]: [usize; 2],
) {
    let (h_out, w_out) = (h / sh, wd / sw);
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = ((co * c_in) + ci) * kh * kw;
            for khi in 0..kh {
                let wrow = &w[wbase + khi * kw..wbase + (khi + 1) * kw];
                for oh in 0..h_out {
                    let ih = (oh * sh + khi) as isize - ph as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xoff = (ci * h + ih as usize) * wd;
                    let grow = &gy[(co * h_out + oh) * w_out..(co * h_out + oh + 1) * w_out];
                    for (ow, &g) in grow.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let base = (ow * sw) as isize - pw as isize;
                        let (k_lo, k_hi, off) = tap_range(base, wd, kw);
                        let span = k_hi - k_lo;
                        if let Some(gx) = gx.as_deref_mut() {
                            let gxrow = &mut gx[xoff + off..xoff + off + span];
                            for (slot, wa) in gxrow.iter_mut().zip(&wrow[k_lo..k_hi]) {
                                *slot += g * wa;
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            let gwrow = &mut gw[wbase + khi * kw + k_lo..wbase + khi * kw + k_hi];
                            for (slot, xa) in gwrow.iter_mut().zip(&x[xoff + off..xoff + off + span])
                            {
                                *slot += g * xa;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn convt2d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    [c_in, h, wd]: [usize; 3],
    [c_out, kh, kw]: [usize; 3],
    [sh, sw]: [usize; 2],
    [ph, pw]: [usize; 2],
) {
    let (h_out, w_out) = (h * sh, wd * sw);
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = ((co * c_in) + ci) * kh * kw;
            for khi in 0..kh {
                let wrow = &w[wbase + khi * kw..wbase + (khi + 1) * kw];
                for ih in 0..h {
                    let oh = (ih * sh + khi) as isize - ph as isize;
                    if oh < 0 || oh >= h_out as isize {
                        continue;
                    }
                    let xrow = &x[(ci * h + ih) * wd..(ci * h + ih + 1) * wd];
                    let orow =
                        &mut out[(co * h_out + oh as usize) * w_out..(co * h_out + oh as usize + 1) * w_out];
                    for (iw, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let base = (iw * sw) as isize - pw as isize;
                        let (k_lo, k_hi, off) = tap_range(base, w_out, kw);
                        let span = k_hi - k_lo;
                        for (slot, wa) in orow[off..off + span].iter_mut().zip(&wrow[k_lo..k_hi]) {
                            *slot += xv * wa;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt2d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    [c_in, h, wd]: [usize; 3],
    [c_out, kh, kw]: [usize; 3],
    [sh, sw]: [usize; 2],
    [ph, pw]: [usize; 2],
) {
    let (h_out, w_out) = (h * sh, wd * sw);
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = ((co * c_in) + ci) * kh * kw;
            for khi in 0..kh {
                let wrow = &w[wbase + khi * kw..wbase + (khi + 1) * kw];
                for ih in 0..h {
                    let oh = (ih * sh + khi) as isize - ph as isize;
                    if oh < 0 || oh >= h_out as isize {
                        continue;
                    }
                    let xoff = (ci * h + ih) * wd;
                    let goff = (co * h_out + oh as usize) * w_out;
                    for iw in 0..wd {
                        let base = (iw * sw) as isize - pw as isize;
                        let (k_lo, k_hi, off) = tap_range(base, w_out, kw);
                        let span = k_hi - k_lo;
                        let gseg = &gy[goff + off..goff + off + span];
                        if let Some(gx) = gx.as_deref_mut() {
                            let mut acc = 0.0;
                            for (ga, wa) in gseg.iter().zip(&wrow[k_lo..k_hi]) {
                                acc += ga * wa;
                            }
                            gx[xoff + iw] += acc;
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            let xv = x[xoff + iw];
                            if xv != 0.0 {
                                let gwrow =
                                    &mut gw[wbase + khi * kw + k_lo..wbase + khi * kw + k_hi];
                                for (slot, ga) in gwrow.iter_mut().zip(gseg) {
                                    *slot += xv * ga;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv3d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    [c_in, t, h, wd]: [usize; 4],
    [c_out, kt, kh, kw]: [usize; 4],
    [st, sh, sw]: [usize; 3],
    [pt, ph, pw]: [usize; 3],
) {
    let (t_out, h_out, w_out) = (t / st, h / sh, wd / sw);
    for co in 0..c_out {
        for ci in 0..c_in {
            for kti in 0..kt {
                for khi in 0..kh {
                    let wbase = (((co * c_in + ci) * kt + kti) * kh + khi) * kw;
                    let wrow = &w[wbase..wbase + kw];
                    for ot in 0..t_out {
                        let it = (ot * st + kti) as isize - pt as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for oh in 0..h_out {
                            let ih = (oh * sh + khi) as isize - ph as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xoff = ((ci * t + it as usize) * h + ih as usize) * wd;
                            let ooff = ((co * t_out + ot) * h_out + oh) * w_out;
                            let xrow = &x[xoff..xoff + wd];
                            let orow = &mut out[ooff..ooff + w_out];
                            for (ow, slot) in orow.iter_mut().enumerate() {
                                let base = (ow * sw) as isize - pw as isize;
                                let (k_lo, k_hi, off) = tap_range(base, wd, kw);
                                let mut acc = 0.0;
                                for (xa, wa) in
                                    xrow[off..off + (k_hi - k_lo)].iter().zip(&wrow[k_lo..k_hi])
                                {
                                    acc += xa * wa;
                                }
                                *slot += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    [c_in, t, h, wd]: [usize; 4],
    [c_out, kt, kh, kw]: [usize; 4],
    [st, sh, sw]: [usize; 3],
    [pt, ph, pw]: [usize; 3],
) {
    let (t_out, h_out, w_out) = (t / st, h / sh, wd / sw);
    for co in 0..c_out {
        for ci in 0..c_in {
            for kti in 0..kt {
                for khi in 0..kh {
                    let wbase = (((co * c_in + ci) * kt + kti) * kh + khi) * kw;
                    let wrow = &w[wbase..wbase + kw];
                    for ot in 0..t_out {
                        let it = (ot * st + kti) as isize - pt as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for oh in 0..h_out {
                            let ih = (oh * sh + khi) as isize - ph as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xoff = ((ci * t + it as usize) * h + ih as usize) * wd;
                            let goff = ((co * t_out + ot) * h_out + oh) * w_out;
                            let grow = &gy[goff..goff + w_out];
                            for (ow, &g) in grow.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                let base = (ow * sw) as isize - pw as isize;
                                let (k_lo, k_hi, off) = tap_range(base, wd, kw);
                                let span = k_hi - k_lo;
                                if let Some(gx) = gx.as_deref_mut() {
                                    let gxrow = &mut gx[xoff + off..xoff + off + span];
                                    for (slot, wa) in gxrow.iter_mut().zip(&wrow[k_lo..k_hi]) {
                                        *slot += g * wa;
                                    }
                                }
                                if let Some(gw) = gw.as_deref_mut() {
                                    let gwrow = &mut gw[wbase + k_lo..wbase + k_hi];
                                    for (slot, xa) in
                                        gwrow.iter_mut().zip(&x[xoff + off..xoff + off + span])
                                    {
                                        *slot += g * xa;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
