use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::ops::{self, BatchNormMode, BnSaved, RunningStats};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode,
        saved: BnSaved<T>,
    },
    Relu(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Add(Var, Var),
    Mse {
        pred: Var,
        target: Var,
    },
    Scale(Var, T),
    Sum(Var),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu(x) | Op::Upsample2(x) | Op::Scale(x, _) | Op::Sum(x) => vec![*x],
            Op::MaxPool2 { x, .. } | Op::Slice { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::Add(a, b) => vec![*a, *b],
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Wengert list of recorded operations. Nodes are appended in execution
/// order, so the list is always a valid topological order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
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

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, out))
    }

    /// Batch normalization; train mode also updates `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let (out, saved) = ops::batch_norm_forward(self.value(x), self.value(gamma), self.value(beta), stats, mode)?;
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                saved,
            },
            out,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through so a poisoned input still reaches the loss
        let out = self.value(x).map(|v| if v <= T::zero() { T::zero() } else { v });
        self.push(Op::Relu(x), out)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2_forward(self.value(x))?;
        Ok(self.push(Op::MaxPool2 { x, argmax }, out))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let out = ops::upsample_nearest2_forward(self.value(x))?;
        Ok(self.push(Op::Upsample2(x), out))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels_forward(&values)?;
        Ok(self.push(Op::Concat(xs.to_vec()), out))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(x), start, len)?;
        Ok(self.push(Op::Slice { x, start }, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ops::check_same_shape("add", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_vec(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Mean squared error against a target that must not require grad.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        ops::check_same_shape("mse_loss", self.value(pred), self.value(target))?;
        if self.requires_grad(target) {
            return Err(Error::invalid("mse_loss", "target must not require grad"));
        }
        let (p, t) = (self.value(pred), self.value(target));
        let sum = p
            .data()
            .iter()
            .zip(t.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let loss = sum / T::from_f64(p.numel().max(1) as f64);
        Ok(self.push(Op::Mse { pred, target }, Tensor::scalar(loss)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Reverse pass from a single-element loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(node, &dy, &mut grads)?;
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
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
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a = *a + b),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let need = [self.requires_grad(*x), self.requires_grad(*w), self.requires_grad(*b)];
                let g = ops::conv2d_backward(self.value(*x), self.value(*w), dy, *stride, *pad, need)?;
                if let Some(dx) = g.dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = g.dw {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(db) = g.db {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                saved,
            } => {
                let (dx, dg, db) =
                    ops::batch_norm_backward(self.value(*x).shape(), self.value(*gamma), saved, *mode, dy);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dg);
                self.accumulate(grads, *beta, db);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), data)?);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape().to_vec());
                let d = dx.data_mut();
                for (&i, &g) in argmax.iter().zip(dy.data()) {
                    d[i as usize] = d[i as usize] + g;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample2(x) => {
                let dx = ops::upsample_nearest2_backward(self.value(*x).shape(), dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(xs) => {
                let mut start = 0;
                for &x in xs {
                    let len = self.value(x).shape()[1];
                    if self.requires_grad(x) {
                        self.accumulate(grads, x, ops::slice_channels(dy, start, len)?);
                    }
                    start += len;
                }
            }
            Op::Slice { x, start } => {
                let mut dx = Tensor::zeros(self.value(*x).shape().to_vec());
                ops::scatter_add_channels(&mut dx, dy, *start);
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let c = T::from_f64(2.0) * dy.item() / T::from_f64(p.numel().max(1) as f64);
                let data = p.data().iter().zip(t.data()).map(|(&a, &b)| c * (a - b)).collect();
                self.accumulate(grads, *pred, Tensor::from_vec(p.shape().to_vec(), data)?);
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, dy.map(|g| g * *c)),
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, dy.item()));
            }
        }
        Ok(())
    }

    /// Hash of every piecewise-linear decision taken in the forward pass:
    /// the sign pattern at each ReLU input and every max-pool argmax.
    /// Two evaluations with equal signatures lie in the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for chunk in self.value(*x).data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i));
                        h.write_u64(bits);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.iter().for_each(|&a| h.write_u32(a)),
                _ => {}
            }
        }
        h.finish()
    }

    /// Smallest `|x|` over all ReLU inputs, or `None` without ReLUs.
    pub fn min_relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|v| v.abs().as_f64()))
            .min_by(f64::total_cmp)
    }
}

/// Gradients of one backward pass, indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the leaf does not require grad or is unreachable.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
