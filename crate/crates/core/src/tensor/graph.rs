//! Computation record for reverse-mode differentiation.
//!
//! A [`Graph`] owns every tensor produced while it is alive. Ops append a
//! node whose inputs are earlier nodes, so the node list is already in
//! topological order and backward is a single reverse sweep.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::conv::{conv2d_backward, conv2d_transpose_backward};
use super::pool::{avg_pool2d_backward, max_pool2d_with_argmax};
use super::resize::resize_bilinear_backward;
use super::{avg_pool2d, conv2d, conv2d_transpose, resize_bilinear, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower bound applied to probabilities before taking logs in the focal loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        window: usize,
        stride: usize,
    },
    Resize {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Relu(Var),
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
    FocalLoss {
        probs: Var,
        target: Vec<usize>,
        gamma: f64,
        alpha: Vec<f64>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::MaxPool { .. } => "max_pool2d",
            Op::AvgPool { .. } => "avg_pool2d",
            Op::Resize { .. } => "resize_bilinear",
            Op::Concat { .. } => "concat_channels",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax_channels",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Sum(_) => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::FocalLoss { .. } => "focal_loss",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            }
            | Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::MaxPool { input, .. }
            | Op::AvgPool { input, .. }
            | Op::Resize { input }
            | Op::Relu(input)
            | Op::Softmax(input)
            | Op::Sum(input)
            | Op::WeightedSum { input, .. }
            | Op::FocalLoss { probs: input, .. } => vec![*input],
            Op::Concat { inputs } => inputs.clone(),
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        }
    }
}

/// One entry of the computation record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub op: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Add a tensor as a leaf. It receives a gradient on backward iff
    /// `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Move a node's tensor out, leaving an empty placeholder behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Shape::scalar()))
    }

    /// Executed ops in order, excluding leaves.
    pub fn record(&self) -> Vec<OpRecord> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !matches!(n.op, Op::Leaf))
            .map(|(i, n)| OpRecord {
                op: n.op.name(),
                inputs: n.op.inputs(),
                output: Var(i),
            })
            .collect()
    }

    /// Fingerprint of every piecewise branch taken by the forward pass: ReLU
    /// signs and max-pool winners. Two evaluations with equal fingerprints
    /// lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(input) => {
                    let x = self.value(*input).data();
                    x.iter().for_each(|&v| (v > T::zero()).hash(&mut h));
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        value.requires_grad = needs_grad || value.requires_grad;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        let out = conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
            dilation,
        )?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let ng = self.needs(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                dilation,
            },
            ng,
        ))
    }

    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let out = conv2d_transpose(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let ng = self.needs(&deps);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
            },
            ng,
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = max_pool2d_with_argmax(self.value(input), window, stride)?;
        let ng = self.needs(&[input]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, ng))
    }

    pub fn avg_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let out = avg_pool2d(self.value(input), window, stride)?;
        let ng = self.needs(&[input]);
        Ok(self.push(
            out,
            Op::AvgPool {
                input,
                window,
                stride,
            },
            ng,
        ))
    }

    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = resize_bilinear(self.value(input), out_h, out_w)?;
        let ng = self.needs(&[input]);
        Ok(self.push(out, Op::Resize { input }, ng))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .map(|&v| self.shape(v))
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::dim(format!(
                    "cannot concat {s} with {first} on channels"
                )));
            }
            channels += s.c;
        }
        let shape = Shape::new(first.n, channels, first.h, first.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape().c * first.plane();
                data.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
            }
        }
        let ng = self.needs(inputs);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            ng,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        let ng = self.needs(&[input]);
        self.push(out, Op::Relu(input), ng)
    }

    /// Softmax over the channel axis at every pixel.
    pub fn softmax_channels(&mut self, input: Var) -> Var {
        let out = softmax_channels(self.value(input));
        let ng = self.needs(&[input]);
        self.push(out, Op::Softmax(input), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(format!(
                "add of {} and {}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(format!(
                "mul of {} and {}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p * q)
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Sum of every element into a `(1,1,1,1)` scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let ng = self.needs(&[input]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(input), ng)
    }

    /// `sum(input * weights)` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::dim(format!(
                "weights {} for input {}",
                weights.shape(),
                x.shape()
            )));
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        let ng = self.needs(&[input]);
        Ok(self.push(
            Tensor::scalar(T::from_f64(s)),
            Op::WeightedSum {
                input,
                weights: weights.data().to_vec(),
            },
            ng,
        ))
    }

    /// Mean categorical focal loss over all pixels. `probs` is `(N,K,H,W)`;
    /// `target` holds `N*H*W` class ids in row-major `(N,H,W)` order.
    pub fn focal_loss(
        &mut self,
        probs: Var,
        target: &[usize],
        gamma: f64,
        alpha: &[f64],
    ) -> Result<Var> {
        let p = self.value(probs);
        let loss = focal_loss_value(p, target, gamma, alpha)?;
        let ng = self.needs(&[probs]);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::FocalLoss {
                probs,
                target: target.to_vec(),
                gamma,
                alpha: alpha.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar. Gradients land on every leaf that was
    /// created with `requires_grad`; contributions from fan-out add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.set_grad(g)?;
                continue;
            }
            for (var, contrib) in self.local_grads(i, &g)? {
                accumulate(&mut grads[var.0], contrib);
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let need = |v: Var| self.nodes[v.0].needs_grad;
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                dilation,
            } => {
                let (dx, dk, db) = conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *padding,
                    *dilation,
                    need(*input),
                )?;
                out.extend(dx.map(|dx| (*input, dx)));
                out.push((*kernel, dk));
                out.extend(bias.map(|b| (b, db)));
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
            } => {
                let (dx, dk, db) = conv2d_transpose_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    need(*input),
                )?;
                out.extend(dx.map(|dx| (*input, dx)));
                out.push((*kernel, dk));
                out.extend(bias.map(|b| (b, db)));
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.shape(*input).numel()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    dx[a] = dx[a] + gv;
                }
                out.push((*input, dx));
            }
            Op::AvgPool {
                input,
                window,
                stride,
            } => {
                out.push((
                    *input,
                    avg_pool2d_backward(self.shape(*input), g, *window, *stride)?,
                ));
            }
            Op::Resize { input } => {
                let os = self.nodes[i].value.shape();
                out.push((
                    *input,
                    resize_bilinear_backward(self.shape(*input), g, os.h, os.w),
                ));
            }
            Op::Concat { inputs } => {
                let s = self.nodes[i].value.shape();
                let mut parts: Vec<Vec<T>> = inputs
                    .iter()
                    .map(|&v| Vec::with_capacity(self.shape(v).numel()))
                    .collect();
                let mut k = 0;
                for _ in 0..s.n {
                    for (j, &v) in inputs.iter().enumerate() {
                        let len = self.shape(v).c * s.plane();
                        parts[j].extend_from_slice(&g[k..k + len]);
                        k += len;
                    }
                }
                for (&v, part) in inputs.iter().zip(parts) {
                    if need(v) {
                        out.push((v, part));
                    }
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*input, dx));
            }
            Op::Softmax(input) => {
                let y = &self.nodes[i].value;
                let s = y.shape();
                let plane = s.plane();
                let mut dx = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    let base = n * s.c * plane;
                    for p in 0..plane {
                        let mut dot = 0.0f64;
                        for c in 0..s.c {
                            let k = base + c * plane + p;
                            dot += g[k].as_f64() * y.data()[k].as_f64();
                        }
                        for c in 0..s.c {
                            let k = base + c * plane + p;
                            let yk = y.data()[k].as_f64();
                            dx[k] = T::from_f64(yk * (g[k].as_f64() - dot));
                        }
                    }
                }
                out.push((*input, dx));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if need(v) {
                        out.push((v, g.to_vec()));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                if need(*a) {
                    out.push((*a, g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect()));
                }
                if need(*b) {
                    out.push((*b, g.iter().zip(x).map(|(&gv, &xv)| gv * xv).collect()));
                }
            }
            Op::Sum(input) => {
                out.push((*input, vec![g[0]; self.shape(*input).numel()]));
            }
            Op::WeightedSum { input, weights } => {
                out.push((*input, weights.iter().map(|&w| w * g[0]).collect()));
            }
            Op::FocalLoss {
                probs,
                target,
                gamma,
                alpha,
            } => {
                let dp = focal_loss_grad(self.value(*probs), target, *gamma, alpha, g[0].as_f64());
                out.push((*probs, dp));
            }
        }
        Ok(out.into_iter().filter(|(v, _)| need(*v)).collect())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, contrib: Vec<T>) {
    match slot {
        None => *slot = Some(contrib),
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
    }
}

/// Channel softmax, computed per pixel with max subtraction in `f64`.
pub(crate) fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    let mut buf = vec![0.0f64; s.c];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for (c, b) in buf.iter_mut().enumerate() {
                *b = x.data()[base + c * plane + p].as_f64();
                m = m.max(*b);
            }
            let mut z = 0.0;
            for b in buf.iter_mut() {
                *b = (*b - m).exp();
                z += *b;
            }
            for (c, b) in buf.iter().enumerate() {
                out[base + c * plane + p] = T::from_f64(b / z);
            }
        }
    }
    Tensor::new(s, out).expect("same shape")
}

fn check_focal_inputs<T: Scalar>(probs: &Tensor<T>, target: &[usize], alpha: &[f64]) -> Result<()> {
    let s = probs.shape();
    if target.len() != s.n * s.plane() {
        return Err(Error::dim(format!(
            "target has {} pixels, probabilities {s} need {}",
            target.len(),
            s.n * s.plane()
        )));
    }
    if alpha.len() != s.c {
        return Err(Error::dim(format!(
            "{} alpha weights for {} classes",
            alpha.len(),
            s.c
        )));
    }
    if let Some(&bad) = target.iter().find(|&&t| t >= s.c) {
        return Err(Error::Data(format!(
            "target class {bad} out of range for {} classes",
            s.c
        )));
    }
    Ok(())
}

fn true_class_prob<T: Scalar>(probs: &Tensor<T>, target: &[usize], k: usize) -> (usize, f64) {
    let s = probs.shape();
    let plane = s.plane();
    let (n, p) = (k / plane, k % plane);
    let idx = (n * s.c + target[k]) * plane + p;
    (idx, probs.data()[idx].as_f64())
}

pub(crate) fn focal_loss_value<T: Scalar>(
    probs: &Tensor<T>,
    target: &[usize],
    gamma: f64,
    alpha: &[f64],
) -> Result<f64> {
    check_focal_inputs(probs, target, alpha)?;
    let mut total = 0.0;
    for k in 0..target.len() {
        let (_, p) = true_class_prob(probs, target, k);
        let q = (1.0 - p).max(0.0);
        total += -alpha[target[k]] * q.powf(gamma) * p.max(PROB_CLAMP).ln();
    }
    Ok(total / target.len() as f64)
}

fn focal_loss_grad<T: Scalar>(
    probs: &Tensor<T>,
    target: &[usize],
    gamma: f64,
    alpha: &[f64],
    upstream: f64,
) -> Vec<T> {
    let mut dp = vec![T::zero(); probs.shape().numel()];
    let scale = upstream / target.len() as f64;
    for k in 0..target.len() {
        let (idx, p) = true_class_prob(probs, target, k);
        let q = (1.0 - p).max(0.0);
        let a = alpha[target[k]];
        let logp = p.max(PROB_CLAMP).ln();
        let from_modulator = if q > 0.0 && gamma != 0.0 {
            gamma * q.powf(gamma - 1.0) * logp
        } else {
            0.0
        };
        let from_log = if p > PROB_CLAMP {
            q.powf(gamma) / p
        } else {
            0.0
        };
        dp[idx] = T::from_f64(-a * (from_log - from_modulator) * scale);
    }
    dp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 2, 3, 3], 0.5).with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_at_three_gives_six() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 1, 1], 3.0).with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_on_non_scalar_is_usage_error() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros([1, 1, 2, 2]).with_grad());
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn relu_values_and_subgradient_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(
            Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0])
                .unwrap()
                .with_grad(),
        );
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_equal_logits_and_shift_invariance() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full([1, 4, 2, 2], 3.0));
        let y = g.softmax_channels(x);
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-7));

        let t = Tensor::<f32>::from_fn([2, 4, 3, 3], |[n, c, h, w]| {
            ((n + 2 * c + 3 * h + 5 * w) as f32 * 0.7).sin() * 4.0
        });
        let shifted = Tensor::new(t.shape(), t.data().iter().map(|v| v + 17.0).collect()).unwrap();
        let a = softmax_channels(&t);
        let b = softmax_channels(&shifted);
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 2, 2], 1.0).with_grad());
        let y = g.add(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn concat_preserves_order_and_slices_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(
            Tensor::from_fn([2, 1, 2, 2], |[n, _, h, w]| (n * 4 + h * 2 + w) as f64).with_grad(),
        );
        let b = g.leaf(Tensor::full([2, 3, 2, 2], -1.0).with_grad());
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), Shape::new(2, 4, 2, 2));
        for n in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    assert_eq!(g.value(c).get(n, 0, h, w), g.value(a).get(n, 0, h, w));
                    assert_eq!(g.value(c).get(n, 2, h, w), -1.0);
                }
            }
        }
        let single = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.value(single).data(), g.value(a).data());
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert!(g.grad(a).unwrap().iter().all(|&v| v == 1.0));
        assert!(g.grad(b).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::zeros([1, 1, 2, 2]));
        let b = g.leaf(Tensor::zeros([1, 1, 3, 2]));
        assert!(matches!(
            g.concat_channels(&[a, b]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn record_is_topological() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros([1, 1, 4, 4]).with_grad());
        let k = g.leaf(Tensor::zeros([1, 1, 3, 3]).with_grad());
        let y = g.conv2d(x, k, None, 1, 1, 1).unwrap();
        let r = g.relu(y);
        let p = g.max_pool2d(r, 2, 2).unwrap();
        let _ = g.sum(p);
        let rec = g.record();
        assert_eq!(
            rec.iter().map(|r| r.op).collect::<Vec<_>>(),
            ["conv2d", "relu", "max_pool2d", "sum"]
        );
        for r in &rec {
            assert!(r.inputs.iter().all(|i| i < &r.output));
        }
    }

    #[test]
    fn max_pool_routes_tied_gradient_to_one_element() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 4, 4], 2.0).with_grad());
        let p = g.max_pool2d(x, 2, 2).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        assert_eq!(grad.iter().filter(|&&v| v != 0.0).count(), 4);
        assert_eq!(grad[0], 1.0);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn focal_loss_hand_value() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(Tensor::new([1, 2, 1, 1], vec![0.5, 0.5]).unwrap());
        let l = g.focal_loss(p, &[1], 2.0, &[1.0, 1.0]).unwrap();
        let want = 0.25 * std::f64::consts::LN_2;
        assert!((g.value(l).data()[0] - want).abs() < 1e-12);
        assert!((want - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn focal_loss_rejects_out_of_range_target() {
        let mut g = Graph::<f32>::new();
        let p = g.leaf(Tensor::full([1, 2, 1, 2], 0.5));
        assert!(matches!(
            g.focal_loss(p, &[0, 2], 2.0, &[1.0, 1.0]),
            Err(Error::Data(_))
        ));
    }
}
