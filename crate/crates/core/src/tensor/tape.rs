//! Reverse-mode gradient tape.
//!
//! Every operation evaluates eagerly and appends a node. `backward` walks the
//! nodes in reverse and returns a gradient for each registered parameter,
//! after which the tape is spent.

use std::collections::BTreeMap;

use super::{lit, ops, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1x1 { x: Var, w: Var, b: Var },
    Conv3x3 { x: Var, w: Var, b: Var, stride: usize },
    Depthwise { x: Var, w: Var },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Concat { a: Var, b: Var },
    Hadamard { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, alpha: T },
    Resize(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Mse { a: Var, b: Var },
    Bce { logits: Var, targets: Var },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable tensor whose gradient `backward` will report.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.into(), v));
        v
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::conv1x1(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Conv1x1 { x, w, b }, y, &[x, w, b]))
    }

    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let y = ops::conv3x3(self.value(x), self.value(w), self.value(b), stride)?;
        Ok(self.push(Op::Conv3x3 { x, w, b, stride }, y, &[x, w, b]))
    }

    pub fn depthwise_conv3x3(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = ops::depthwise_conv3x3(self.value(x), self.value(w))?;
        Ok(self.push(Op::Depthwise { x, w }, y, &[x, w]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu(x), y, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(Op::Sigmoid(x), y, &[x])
    }

    pub fn softmax_spatial(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_spatial(self.value(x))?;
        Ok(self.push(Op::Softmax(x), y, &[x]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(Op::Concat { a, b }, y, &[a, b]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(Op::Hadamard { a, b }, y, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add { a, b }, y, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, alpha: T) -> Var {
        let y = self.value(x).map(|v| v * alpha);
        self.push(Op::Scale { x, alpha }, y, &[x])
    }

    pub fn bilinear_resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::bilinear_resize(self.value(x), h, w)?;
        Ok(self.push(Op::Resize(x), y, &[x]))
    }

    pub fn maxpool_to(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (y, argmax) = ops::maxpool_to_with_argmax(self.value(x), h, w)?;
        Ok(self.push(Op::MaxPool { x, argmax }, y, &[x]))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mse(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mse { a, b }, Tensor::scalar(y), &[a, b]))
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let y = ops::bce_with_logits(self.value(logits), self.value(targets))?;
        Ok(self.push(Op::Bce { logits, targets }, Tensor::scalar(y), &[logits, targets]))
    }

    /// Back-propagates from the scalar `loss`. A tape can be differentiated
    /// once; record a fresh forward pass before calling this again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let need = |v: &Var| self.nodes[v.0].requires_grad;
            let emit = |v: Var, t: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                accumulate(&mut grads[v.0], t);
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv1x1 { x, w, b } => {
                    let (gx, gw, gb) = ops::conv1x1_backward(self.value(*x), self.value(*w), &g, need(x));
                    if let Some(gx) = gx {
                        emit(*x, gx, &mut grads);
                    }
                    if need(w) {
                        emit(*w, gw, &mut grads);
                    }
                    if need(b) {
                        emit(*b, gb, &mut grads);
                    }
                }
                Op::Conv3x3 { x, w, b, stride } => {
                    let (gx, gw, gb) =
                        ops::conv3x3_backward(self.value(*x), self.value(*w), &g, *stride, need(x));
                    if let Some(gx) = gx {
                        emit(*x, gx, &mut grads);
                    }
                    if need(w) {
                        emit(*w, gw, &mut grads);
                    }
                    if need(b) {
                        emit(*b, gb, &mut grads);
                    }
                }
                Op::Depthwise { x, w } => {
                    let (gx, gw) =
                        ops::depthwise_conv3x3_backward(self.value(*x), self.value(*w), &g, need(x));
                    if let Some(gx) = gx {
                        emit(*x, gx, &mut grads);
                    }
                    if need(w) {
                        emit(*w, gw, &mut grads);
                    }
                }
                Op::Relu(x) => emit(*x, ops::relu_backward(self.value(*x), &g), &mut grads),
                Op::Sigmoid(x) => emit(*x, ops::sigmoid_backward(&node.value, &g), &mut grads),
                Op::Softmax(x) => emit(*x, ops::softmax_spatial_backward(&node.value, &g), &mut grads),
                Op::Concat { a, b } => {
                    let ca = self.value(*a).shape()[0];
                    let cb = self.value(*b).shape()[0];
                    if need(a) {
                        emit(*a, ops::slice_channels(&g, 0, ca)?, &mut grads);
                    }
                    if need(b) {
                        emit(*b, ops::slice_channels(&g, ca, cb)?, &mut grads);
                    }
                }
                Op::Hadamard { a, b } => {
                    if need(a) {
                        emit(*a, mul_raw(&g, self.value(*b)), &mut grads);
                    }
                    if need(b) {
                        emit(*b, mul_raw(&g, self.value(*a)), &mut grads);
                    }
                }
                Op::Add { a, b } => {
                    if need(a) {
                        emit(*a, g.clone(), &mut grads);
                    }
                    if need(b) {
                        emit(*b, g, &mut grads);
                    }
                }
                Op::Scale { x, alpha } => {
                    let alpha = *alpha;
                    emit(*x, g.map(|v| v * alpha), &mut grads);
                }
                Op::Resize(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    emit(*x, ops::bilinear_resize_backward(&shape, &g), &mut grads);
                }
                Op::MaxPool { x, argmax } => {
                    let shape = self.value(*x).shape().to_vec();
                    emit(*x, ops::maxpool_backward(&shape, argmax, &g), &mut grads);
                }
                Op::Mse { a, b } => {
                    let ga = ops::mse_backward(self.value(*a), self.value(*b), g.item());
                    if need(b) {
                        emit(*b, ga.map(|v| -v), &mut grads);
                    }
                    if need(a) {
                        emit(*a, ga, &mut grads);
                    }
                }
                Op::Bce { logits, targets } => {
                    if need(targets) {
                        return Err(Error::InvalidArgument(
                            "bce_with_logits targets must be constants".into(),
                        ));
                    }
                    let gz = ops::bce_with_logits_backward(self.value(*logits), self.value(*targets), g.item());
                    emit(*logits, gz, &mut grads);
                }
            }
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape().to_vec()));
            match out.get_mut(name) {
                Some(existing) => add_assign(existing, &g),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => add_assign(existing, &g),
        None => *slot = Some(g),
    }
}

fn add_assign<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = *d + s;
    }
}

fn mul_raw<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}

/// Sum of scalar vars scaled by `weight`, recorded on the tape.
pub(crate) fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, terms: &[Var], weight: f64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &t in terms {
        let s = tape.scale(t, lit(weight));
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("weighted_sum of no terms".into()))
}
