//! Tape of recorded operations and the reverse sweep over it.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Parameter leaves reference the store directly, so building a graph never
//! copies weights. Nodes are appended in evaluation order, which is already
//! a topological order, so the backward pass is a single reverse scan.

use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, Conv1dGeom, Conv2dGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: Conv1dGeom,
        cols: Vec<f64>,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: Conv2dGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    MaxOverTime {
        input: Var,
        argmax: Vec<usize>,
    },
    Mask {
        input: Var,
        mask: Vec<f64>,
    },
    Concat(Vec<Var>),
    Softmax(Var),
    WeightedSum {
        coeffs: Var,
        parts: Vec<Var>,
    },
    Mean(Vec<Var>),
    MseOverTraits {
        pred: Var,
        target: Vec<f64>,
    },
}

struct Node {
    // `None` only for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    track_params: bool,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            track_params: true,
        }
    }

    /// A graph that never computes parameter gradients (evaluation).
    pub fn inference(store: &'s ParamStore) -> Self {
        Graph {
            track_params: false,
            ..Graph::new(store)
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let needs_grad = self.track_params && !self.store.get(id).frozen;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Valid 1-D cross-correlation of `[c_in, len]` with `[c_out, c_in, width]`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernels), self.shape(bias));
        let (&[c_in, len], &[c_out, k_in, width]) = (xs, ks) else {
            return Err(Error::Dimension(format!(
                "conv1d expects input [C, L] and kernels [O, C, W], got {xs:?} and {ks:?}"
            )));
        };
        if k_in != c_in {
            return Err(Error::Dimension(format!(
                "conv1d kernels expect {k_in} input channels, input has {c_in}"
            )));
        }
        if bs != [c_out] {
            return Err(Error::Dimension(format!("conv1d bias shape {bs:?}, expected [{c_out}]")));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("conv1d stride must be positive".into()));
        }
        if len < width {
            return Err(Error::InputTooShort { got: len, min: width });
        }
        let geom = Conv1dGeom {
            c_in,
            len,
            c_out,
            width,
            stride,
            len_out: (len - width) / stride + 1,
        };
        let cols = kernels::im2col_1d(self.value(input).data(), &geom);
        let out = kernels::conv1d_forward(&cols, self.value(kernels).data(), self.value(bias).data(), &geom);
        let value = Tensor::new(vec![c_out, geom.len_out], out)?;
        let needs = self.any_grad(&[input, kernels, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
            needs,
        ))
    }

    /// 2-D cross-correlation of `[c_in, h, w]` with `[c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(input), self.shape(kernels), self.shape(bias));
        let (&[c_in, h, w], &[c_out, k_in, kh, kw]) = (xs, ks) else {
            return Err(Error::Dimension(format!(
                "conv2d expects input [C, H, W] and kernels [O, C, K, K], got {xs:?} and {ks:?}"
            )));
        };
        if k_in != c_in || kh != kw {
            return Err(Error::Dimension(format!(
                "conv2d kernels {ks:?} incompatible with input {xs:?}"
            )));
        }
        if bs != [c_out] {
            return Err(Error::Dimension(format!("conv2d bias shape {bs:?}, expected [{c_out}]")));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("conv2d stride must be positive".into()));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Dimension(format!(
                "conv2d output would be empty: input {h}x{w}, pad {pad}, kernel {k}"
            )));
        }
        let geom = Conv2dGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        };
        let cols = kernels::im2col_2d(self.value(input).data(), &geom);
        let out = kernels::conv2d_forward(&cols, self.value(kernels).data(), self.value(bias).data(), &geom);
        let value = Tensor::new(vec![c_out, geom.h_out, geom.w_out], out)?;
        let needs = self.any_grad(&[input, kernels, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
            needs,
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let &[c, h, w] = self.shape(input) else {
            return Err(Error::Dimension(format!(
                "max_pool2d expects [C, H, W], got {:?}",
                self.shape(input)
            )));
        };
        if size == 0 || h < size || w < size {
            return Err(Error::Dimension(format!("cannot pool {h}x{w} with window {size}")));
        }
        let (out, argmax) = kernels::max_pool2d(self.value(input).data(), c, h, w, size);
        let value = Tensor::new(vec![c, h / size, w / size], out)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool2d { input, argmax }, needs))
    }

    /// Fully connected layer `W·x + b` on a vector input.
    pub fn linear(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let n = self.value(input).len();
        let (ws, bs) = (self.shape(weights), self.shape(bias));
        let &[m, wn] = ws else {
            return Err(Error::Dimension(format!("linear weights must be [M, N], got {ws:?}")));
        };
        if wn != n || bs != [m] {
            return Err(Error::Dimension(format!(
                "linear: weights {ws:?}, bias {bs:?}, input length {n}"
            )));
        }
        let x = self.value(input).data();
        let w = self.value(weights).data();
        let mut out = self.value(bias).data().to_vec();
        kernels::gemm(m, n, 1, w, false, x, false, 1.0, &mut out);
        let needs = self.any_grad(&[input, weights, bias]);
        Ok(self.push(Tensor::vector(out), Op::Linear { input, weights, bias }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Sigmoid(x), needs)
    }

    /// Mean over every axis but the first: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::Dimension(format!(
                "global_avg_pool needs rank >= 2, got {:?}",
                t.shape()
            )));
        }
        let c = t.shape()[0];
        let inner = t.len() / c;
        let out = t
            .data()
            .chunks(inner)
            .map(|row| row.iter().sum::<f64>() / inner as f64)
            .collect();
        let needs = self.any_grad(&[x]);
        Ok(self.push(Tensor::vector(out), Op::GlobalAvgPool(x), needs))
    }

    /// Per-channel maximum of `[C, L]`; ties resolve to the lowest index.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[c, l] = t.shape() else {
            return Err(Error::Dimension(format!("max_over_time expects [C, L], got {:?}", t.shape())));
        };
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for (ch, row) in t.data().chunks(l).enumerate() {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            argmax.push(ch * l + best);
        }
        let needs = self.any_grad(&[x]);
        Ok(self.push(Tensor::vector(out), Op::MaxOverTime { input: x, argmax }, needs))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::Mask { input: x, mask }, needs))
    }

    /// Order-preserving concatenation of flattened parts into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let needs = self.any_grad(parts);
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), needs))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = d.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let out = exp.into_iter().map(|e| e / sum).collect();
        let needs = self.any_grad(&[x]);
        self.push(Tensor::vector(out), Op::Softmax(x), needs)
    }

    /// `Σ_k coeffs[k] · parts[k]` over equally shaped parts.
    pub fn weighted_sum(&mut self, coeffs: Var, parts: &[Var]) -> Result<Var> {
        let c = self.value(coeffs).data().to_vec();
        if c.len() != parts.len() || parts.is_empty() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} coefficients for {} parts",
                c.len(),
                parts.len()
            )));
        }
        let shape = self.shape(parts[0]).to_vec();
        let mut out = vec![0.0; self.value(parts[0]).len()];
        for (&p, w) in parts.iter().zip(&c) {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "weighted_sum parts differ in shape: {shape:?} vs {:?}",
                    t.shape()
                )));
            }
            for (o, v) in out.iter_mut().zip(t.data()) {
                *o += w * v;
            }
        }
        let mut deps = parts.to_vec();
        deps.push(coeffs);
        let needs = self.any_grad(&deps);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::WeightedSum {
                coeffs,
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Elementwise mean of equally shaped parts.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("mean of zero parts".into()));
        }
        let shape = self.shape(parts[0]).to_vec();
        let mut out = vec![0.0; self.value(parts[0]).len()];
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "mean parts differ in shape: {shape:?} vs {:?}",
                    t.shape()
                )));
            }
            for (o, v) in out.iter_mut().zip(t.data()) {
                *o += v;
            }
        }
        let n = parts.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        let needs = self.any_grad(parts);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mean(parts.to_vec()), needs))
    }

    /// `(1/n) Σ (pred_i − target_i)²` as a one-element tensor.
    pub fn mse_over_traits(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::Dimension(format!(
                "mse: prediction length {} vs target length {}",
                p.len(),
                target.len()
            )));
        }
        let loss = mse(p, target);
        let needs = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MseOverTraits {
                pred,
                target: target.to_vec(),
            },
            needs,
        ))
    }

    /// Hash of every discrete decision taken in the forward pass (ReLU
    /// active sets, max/argmax positions). Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).data() {
                        mix(u64::from(v > 0.0));
                    }
                }
                Op::MaxOverTime { argmax, .. } | Op::MaxPool2d { argmax, .. } => {
                    argmax.iter().for_each(|&a| mix(a as u64));
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = Vec::new();
        let mut leaves = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.needs_grad {
                continue;
            }
            match node.op {
                Op::Param(id) => {
                    let g = grads[i].take().unwrap_or_else(|| vec![0.0; self.store.value(id).len()]);
                    params.push((id, g));
                }
                Op::Leaf => {
                    let len = self.value(Var(i)).len();
                    leaves.insert(Var(i), grads[i].take().unwrap_or_else(|| vec![0.0; len]));
                }
                _ => {}
            }
        }
        Ok(Gradients { params, leaves })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv1d {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let mut gk = needs(kernels).then(|| vec![0.0; self.value(*kernels).len()]);
                let mut gb = needs(bias).then(|| vec![0.0; geom.c_out]);
                let dx = kernels::conv1d_backward(
                    g,
                    cols,
                    self.value(*kernels).data(),
                    geom,
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                    needs(input),
                );
                if let Some(gk) = gk {
                    accumulate(grads, *kernels, &gk);
                }
                if let Some(gb) = gb {
                    accumulate(grads, *bias, &gb);
                }
                if let Some(dx) = dx {
                    accumulate(grads, *input, &dx);
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let mut gk = needs(kernels).then(|| vec![0.0; self.value(*kernels).len()]);
                let mut gb = needs(bias).then(|| vec![0.0; geom.c_out]);
                let dx = kernels::conv2d_backward(
                    g,
                    cols,
                    self.value(*kernels).data(),
                    geom,
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                    needs(input),
                );
                if let Some(gk) = gk {
                    accumulate(grads, *kernels, &gk);
                }
                if let Some(gb) = gb {
                    accumulate(grads, *bias, &gb);
                }
                if let Some(dx) = dx {
                    accumulate(grads, *input, &dx);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                if needs(input) {
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for (&a, v) in argmax.iter().zip(g) {
                        dx[a] += v;
                    }
                    accumulate(grads, *input, &dx);
                }
            }
            Op::Linear { input, weights, bias } => {
                let x = self.value(*input).data();
                let (m, n) = (g.len(), x.len());
                if needs(weights) {
                    let mut gw = vec![0.0; m * n];
                    for (r, gv) in g.iter().enumerate() {
                        for (dst, xv) in gw[r * n..(r + 1) * n].iter_mut().zip(x) {
                            *dst = gv * xv;
                        }
                    }
                    accumulate(grads, *weights, &gw);
                }
                if needs(bias) {
                    accumulate(grads, *bias, g);
                }
                if needs(input) {
                    let mut dx = vec![0.0; n];
                    kernels::gemm(n, m, 1, self.value(*weights).data(), true, g, false, 0.0, &mut dx);
                    accumulate(grads, *input, &dx);
                }
            }
            Op::Relu(x) => {
                if needs(x) {
                    let dx: Vec<f64> = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Sigmoid(x) => {
                if needs(x) {
                    let y = self.nodes[i].value.as_ref().expect("sigmoid value").data();
                    let dx: Vec<f64> = y.iter().zip(g).map(|(s, gv)| gv * s * (1.0 - s)).collect();
                    accumulate(grads, *x, &dx);
                }
            }
            Op::GlobalAvgPool(x) => {
                if needs(x) {
                    let t = self.value(*x);
                    let inner = t.len() / t.shape()[0];
                    let mut dx = vec![0.0; t.len()];
                    for (row, gv) in dx.chunks_mut(inner).zip(g) {
                        row.fill(gv / inner as f64);
                    }
                    accumulate(grads, *x, &dx);
                }
            }
            Op::MaxOverTime { input, argmax } => {
                if needs(input) {
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for (&a, v) in argmax.iter().zip(g) {
                        dx[a] += v;
                    }
                    accumulate(grads, *input, &dx);
                }
            }
            Op::Mask { input, mask } => {
                if needs(input) {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                    accumulate(grads, *input, &dx);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if needs(p) {
                        accumulate(grads, *p, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Softmax(x) => {
                if needs(x) {
                    let y = self.nodes[i].value.as_ref().expect("softmax value").data();
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    let dx: Vec<f64> = y.iter().zip(g).map(|(yv, gv)| yv * (gv - dot)).collect();
                    accumulate(grads, *x, &dx);
                }
            }
            Op::WeightedSum { coeffs, parts } => {
                let c = self.value(*coeffs).data();
                if needs(coeffs) {
                    let dc: Vec<f64> = parts
                        .iter()
                        .map(|p| self.value(*p).data().iter().zip(g).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(grads, *coeffs, &dc);
                }
                for (p, w) in parts.iter().zip(c) {
                    if needs(p) {
                        let dp: Vec<f64> = g.iter().map(|gv| gv * w).collect();
                        accumulate(grads, *p, &dp);
                    }
                }
            }
            Op::Mean(parts) => {
                let scale = 1.0 / parts.len() as f64;
                let dp: Vec<f64> = g.iter().map(|gv| gv * scale).collect();
                for p in parts {
                    if needs(p) {
                        accumulate(grads, *p, &dp);
                    }
                }
            }
            Op::MseOverTraits { pred, target } => {
                if needs(pred) {
                    let p = self.value(*pred).data();
                    let n = p.len() as f64;
                    let dx: Vec<f64> = p.iter().zip(target).map(|(a, b)| g[0] * 2.0 * (a - b) / n).collect();
                    accumulate(grads, *pred, &dx);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Logistic function, clamped so the result is strictly inside (0, 1) even
/// where `f64` rounding would otherwise saturate.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Gradients produced by one backward sweep.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f64>)>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    /// Gradient of a [`Graph::variable`] leaf.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_output_length() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[2, 120_000]));
        let k = g.constant(Tensor::zeros(&[1, 2, 200]));
        let b = g.constant(Tensor::full(&[1], 0.7));
        let y = g.conv1d(x, k, b, 100).unwrap();
        assert_eq!(g.shape(y), &[1, 1199]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn conv1d_errors() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[2, 10]));
        let k = g.constant(Tensor::zeros(&[1, 3, 4]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv1d(x, k, b, 1), Err(Error::Dimension(_))));
        let k = g.constant(Tensor::zeros(&[1, 2, 11]));
        assert!(matches!(
            g.conv1d(x, k, b, 1),
            Err(Error::InputTooShort { got: 10, min: 11 })
        ));
    }

    #[test]
    fn conv2d_ones_and_identity() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::full(&[1, 4, 4], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[9.0; 4]);

        let img: Vec<f64> = (0..16).map(|i| i as f64 * 0.25).collect();
        let x = g.constant(t(&[1, 4, 4], &img));
        let k = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let y = g.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), img.as_slice());
    }

    #[test]
    fn conv2d_rejects_empty_output() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[1, 2, 2]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, k, b, 1, 0), Err(Error::Dimension(_))));
        assert!(g.conv2d(x, k, b, 1, 1).is_ok());
    }

    #[test]
    fn linear_identity_and_bias() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let zero = g.constant(Tensor::zeros(&[3]));
        let y = g.linear(x, eye, zero).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);

        let w0 = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::vector(vec![0.5, -0.25]));
        let y = g.linear(x, w0, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -0.25]);

        let bad = g.constant(Tensor::zeros(&[2, 4]));
        assert!(g.linear(x, bad, b).is_err());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-3.0, -0.1, 0.7, 12.0] {
            assert!((sigmoid(x) - (1.0 - sigmoid(-x))).abs() < 1e-15);
        }
        assert!(sigmoid(800.0) < 1.0 && sigmoid(-800.0) > 0.0);

        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.25]);
    }

    #[test]
    fn relu_and_pools() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![-1.0, 2.0, 0.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0, 0.0]);

        let x = g.constant(t(&[2, 2], &[4.0, 4.0, 0.0, 1.0]));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 0.5]);

        let x = g.constant(t(&[1, 3], &[1.0, 3.0, 2.0]));
        let y = g.max_over_time(x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
    }

    #[test]
    fn max_over_time_tie_goes_to_first() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.variable(t(&[1, 4], &[2.0; 4]));
        let m = g.max_over_time(x).unwrap();
        let loss = g.mse_over_traits(m, &[0.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[4.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_modes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.constant(Tensor::full(&[10_000], 1.0));
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(g.dropout(x, -0.1, true, &mut rng).is_err());
        let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
        let vals = g.value(y).data();
        let survivors = vals.iter().filter(|&&v| v != 0.0).count() as f64 / vals.len() as f64;
        assert!((survivors - 0.5).abs() < 0.02, "survivor fraction {survivors}");
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn concat_width() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::zeros(&[64]));
        let b = g.constant(Tensor::zeros(&[64]));
        let c = g.constant(Tensor::zeros(&[512]));
        let y = g.concat(&[a, b, c]).unwrap();
        assert_eq!(g.shape(y), &[640]);
        let single = g.concat(&[c]).unwrap();
        assert_eq!(g.value(single), g.value(c));
    }

    #[test]
    fn mse_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let label = [0.2, 0.4, 0.6, 0.8, 0.5];
        let p = g.constant(Tensor::vector(label.to_vec()));
        let l = g.mse_over_traits(p, &label).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let shifted: Vec<f64> = label.iter().map(|v| v + 0.1).collect();
        let p = g.constant(Tensor::vector(shifted));
        let l = g.mse_over_traits(p, &label).unwrap();
        assert!((g.value(l).item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(2.0), true).unwrap();
        let u = store.add("u", Tensor::scalar(3.0), false).unwrap();
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let uv = g.param(u);
        assert_eq!(g.param(w), wv);
        let s = g.concat(&[wv, uv]).unwrap();
        let l = g.mse_over_traits(s, &[0.0, 0.0]).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.param(w).is_none());
        assert_eq!(grads.param(u).unwrap(), &[3.0]);
    }

    #[test]
    fn inference_graph_tracks_nothing() {
        let mut store = ParamStore::new();
        let u = store.add("u", Tensor::scalar(3.0), false).unwrap();
        let mut g = Graph::inference(&store);
        let uv = g.param(u);
        assert!(!g.needs_grad(uv));
    }
}
