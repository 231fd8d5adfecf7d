//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] walks the record in reverse and returns a
//! [`GradientMap`] holding one gradient per leaf that requires it. Nodes are
//! appended in evaluation order, so the record is topologically sorted by
//! construction.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{Shape, Tensor};

/// Position of a node on its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Which convolution kernels a tape executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvImpl {
    /// im2col lowering plus a GEMM.
    #[default]
    Im2col,
    /// Direct nested loops that count every multiply-accumulate.
    NaiveCounting,
}

pub(crate) enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId, broadcast: bool },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    ScaleBy { x: NodeId, factor: NodeId },
    Sum { x: NodeId },
    Conv2d { x: NodeId, weight: NodeId, bias: Option<NodeId>, geom: nn::conv::ConvGeom },
    Depthwise { x: NodeId, weight: NodeId, bias: Option<NodeId>, geom: nn::conv::ConvGeom },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, saved: nn::norm::BnSaved },
    Elu { x: NodeId, alpha: f64 },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    AvgPool { x: NodeId, k: usize, stride: usize },
    GlobalAvgPool { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    SoftmaxCrossEntropy { logits: NodeId, probs: Vec<f64>, labels: Vec<usize> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    conv_impl: ConvImpl,
    macs: Cell<u64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose convolutions run the naive loops and tally MACs.
    pub fn counting() -> Self {
        Self {
            conv_impl: ConvImpl::NaiveCounting,
            ..Self::default()
        }
    }

    pub fn conv_impl(&self) -> ConvImpl {
        self.conv_impl
    }

    /// Multiply-accumulates counted so far (only on a [`Tape::counting`] tape).
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// Records a tensor as an input leaf. Gradients are tracked when the
    /// tensor's `requires_grad` flag is set.
    pub fn leaf(&self, tensor: Tensor) -> Var<'_> {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a tensor as a leaf that always receives a gradient.
    pub fn param(&self, tensor: Tensor) -> Var<'_> {
        self.push(tensor, Op::Leaf, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id.0].value)
    }

    pub(crate) fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0].requires_grad
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Every leaf that requires a gradient gets an entry; leaves the loss
    /// does not depend on get zeros. Contributions from multiple consumers
    /// are summed.
    pub fn backward(&self, loss: Var<'_>) -> Result<GradientMap> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id.0].value.shape();
        if !loss_shape.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a (1,1,1,1) loss, got {loss_shape}"
            )));
        }
        if nodes.iter().all(|n| matches!(n.op, Op::Leaf)) {
            return Err(Error::Contract("backward called on an empty tape".into()));
        }

        let mut grads: Vec<Option<Tensor>> = (0..=loss.id.0).map(|_| None).collect();
        grads[loss.id.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.id.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            for (target, contribution) in backward_rule(&nodes, node, &upstream)? {
                if !nodes[target.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[target.0], contribution);
            }
        }

        let mut map = BTreeMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(NodeId(idx), g);
            }
        }
        Ok(GradientMap { grads: map })
    }
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn backward_rule(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
    let val = |id: NodeId| -> &Tensor { &nodes[id.0].value };
    let needs = |id: NodeId| nodes[id.0].requires_grad;
    let out = match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add { a, b, broadcast } => {
            let gb = if *broadcast {
                nn::pool::spatial_sum(g)
            } else {
                g.clone()
            };
            vec![(*a, g.clone()), (*b, gb)]
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let ga = zip_map(g, bv, |g, b| g * b);
            let gb = zip_map(g, av, |g, a| g * a);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Scale { x, factor } => {
            vec![(*x, map(g, |v| v * factor))]
        }
        Op::ScaleBy { x, factor } => {
            let s = val(*factor).data()[0];
            let xv = val(*x);
            let gs: f64 = g.data().iter().zip(xv.data()).map(|(g, x)| g * x).sum();
            vec![(*x, map(g, |v| v * s)), (*factor, Tensor::scalar(gs))]
        }
        Op::Sum { x } => {
            let gv = g.data()[0];
            vec![(*x, Tensor::full(val(*x).shape(), gv))]
        }
        Op::Conv2d { x, weight, bias, geom } => {
            let grads = nn::conv::conv2d_backward(val(*x), val(*weight), g, geom, needs(*x));
            let mut out = vec![(*weight, grads.weight)];
            if let Some(dx) = grads.input {
                out.push((*x, dx));
            }
            if let Some(b) = bias {
                out.push((*b, nn::conv::bias_grad(g)));
            }
            out
        }
        Op::Depthwise { x, weight, bias, geom } => {
            let (dx, dw) = nn::conv::depthwise_backward(val(*x), val(*weight), g, geom);
            let mut out = vec![(*x, dx), (*weight, dw)];
            if let Some(b) = bias {
                out.push((*b, nn::conv::bias_grad(g)));
            }
            out
        }
        Op::BatchNorm { x, gamma, beta, saved } => {
            let grads = nn::norm::batch_norm_backward(val(*gamma), g, saved);
            vec![(*x, grads.input), (*gamma, grads.gamma), (*beta, grads.beta)]
        }
        Op::Elu { x, alpha } => {
            let y = &node.value;
            let xv = val(*x);
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(y.data())
                .map(|((g, x), y)| if *x > 0.0 { *g } else { g * (y + alpha) })
                .collect();
            vec![(*x, Tensor::new(xv.shape(), data)?)]
        }
        Op::MaxPool { x, argmax } => {
            let mut dx = Tensor::zeros(val(*x).shape());
            let d = dx.data_mut();
            for (gv, &src) in g.data().iter().zip(argmax) {
                d[src] += gv;
            }
            vec![(*x, dx)]
        }
        Op::AvgPool { x, k, stride } => {
            vec![(*x, nn::pool::avg_pool_backward(val(*x).shape(), g, *k, *stride))]
        }
        Op::GlobalAvgPool { x } => {
            let shape = val(*x).shape();
            let inv = 1.0 / shape.spatial() as f64;
            let hw = shape.spatial();
            let mut data = Vec::with_capacity(shape.numel());
            for gv in g.data() {
                data.extend(std::iter::repeat_n(gv * inv, hw));
            }
            vec![(*x, Tensor::new(shape, data)?)]
        }
        Op::Dropout { x, mask } => {
            let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
            vec![(*x, Tensor::new(g.shape(), data)?)]
        }
        Op::SoftmaxCrossEntropy { logits, probs, labels } => {
            let shape = val(*logits).shape();
            let scale = g.data()[0] / labels.len() as f64;
            let k = shape.c;
            let mut data = probs.clone();
            for (n, &label) in labels.iter().enumerate() {
                data[n * k + label] -= 1.0;
            }
            data.iter_mut().for_each(|v| *v *= scale);
            vec![(*logits, Tensor::new(shape, data)?)]
        }
    };
    Ok(out)
}

pub(crate) fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape(), data).expect("same length")
}

pub(crate) fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same length")
}

/// Gradients keyed by the leaf they belong to.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    grads: BTreeMap<NodeId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {})", self.id.0, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.value().shape()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub(crate) fn record(&self, value: Tensor, op: Op, inputs: &[Var<'t>]) -> Var<'t> {
        let requires_grad = inputs.iter().any(Var::requires_grad);
        self.tape.push(value, op, requires_grad)
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    /// Element-wise sum. `other` may also be (N, C, 1, 1), in which case it
    /// is broadcast over the spatial axes.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa == sb {
            let out = zip_map(&a, &b, |x, y| x + y);
            return Ok(self.record(out, Op::Add { a: self.id, b: other.id, broadcast: false }, &[*self, other]));
        }
        if sb.n == sa.n && sb.c == sa.c && sb.h == 1 && sb.w == 1 {
            let hw = sa.spatial();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + b.data()[i / hw])
                .collect();
            let out = Tensor::new(sa, data)?;
            return Ok(self.record(out, Op::Add { a: self.id, b: other.id, broadcast: true }, &[*self, other]));
        }
        Err(Error::Shape(format!("cannot add shapes {sa} and {sb}")))
    }

    /// Element-wise product of equal shapes.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "cannot multiply shapes {} and {}",
                a.shape(),
                b.shape()
            )));
        }
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self.record(out, Op::Mul { a: self.id, b: other.id }, &[*self, other]))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, factor: f64) -> Result<Var<'t>> {
        if !factor.is_finite() {
            return Err(Error::Argument(format!("scale factor must be finite, got {factor}")));
        }
        let out = map(&self.value(), |v| v * factor);
        Ok(self.record(out, Op::Scale { x: self.id, factor }, &[*self]))
    }

    /// Multiplies every element by a recorded (1,1,1,1) scalar.
    pub fn scale_by(&self, factor: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&factor)?;
        let s = factor.value();
        if !s.shape().is_scalar() {
            return Err(Error::Shape(format!("scale_by needs a (1,1,1,1) factor, got {}", s.shape())));
        }
        let sv = s.data()[0];
        let out = map(&self.value(), |v| v * sv);
        Ok(self.record(out, Op::ScaleBy { x: self.id, factor: factor.id }, &[*self, factor]))
    }

    /// Sum of all elements as a (1,1,1,1) value.
    pub fn sum(&self) -> Var<'t> {
        let total = self.value().sum();
        self.record(Tensor::scalar(total), Op::Sum { x: self.id }, &[*self])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_add() {
        let tape = Tape::new();
        let a = tape.leaf(t((1, 1, 1, 2), &[1.0, 2.0]));
        let b = tape.leaf(t((1, 1, 1, 2), &[3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn broadcast_add() {
        let tape = Tape::new();
        let a = tape.leaf(t((1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t((1, 1, 1, 1), &[10.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[11.0, 12.0, 13.0, 14.0]);
    }

    #[test]
    fn add_rejects_other_broadcasts() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros((1, 2, 2, 2)));
        let b = tape.leaf(Tensor::zeros((1, 1, 2, 2)));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("1x2x2x2") && err.contains("1x1x2x2"), "{err}");
        let c = tape.leaf(Tensor::zeros((1, 1, 1, 1)));
        assert!(a.add(c).is_err());
    }

    #[test]
    fn add_backward_is_all_ones() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros((1, 1, 2, 2)));
        let b = tape.param(Tensor::zeros((1, 1, 2, 2)));
        let loss = a.add(b).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &Tensor::ones((1, 1, 2, 2)));
    }

    #[test]
    fn broadcast_gradient_is_spatial_sum() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros((2, 3, 2, 2)));
        let b = tape.param(Tensor::zeros((2, 3, 1, 1)));
        let w = tape.leaf(Tensor::from_fn((2, 3, 2, 2), |n, c, h, w| (n + 2 * c + h + 3 * w) as f64));
        let loss = a.add(b).unwrap().mul(w).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        let gb = grads.get(b).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let expected: f64 = (0..2)
                    .flat_map(|h| (0..2).map(move |w| (n + 2 * c + h + 3 * w) as f64))
                    .sum();
                assert_eq!(gb.at(n, c, 0, 0), expected);
            }
        }
    }

    #[test]
    fn scale_examples() {
        let tape = Tape::new();
        let x = tape.leaf(t((1, 1, 1, 2), &[2.0, 4.0]));
        assert_eq!(x.scale(0.5).unwrap().value().data(), &[1.0, 2.0]);
        assert_eq!(x.scale(1.0).unwrap().value().data(), &[2.0, 4.0]);
        assert_eq!(x.scale(0.0).unwrap().value().data(), &[0.0, 0.0]);
        assert!(matches!(x.scale(f64::NAN), Err(Error::Argument(_))));
        assert!(matches!(x.scale(f64::INFINITY), Err(Error::Argument(_))));
    }

    #[test]
    fn linear_and_fan_out_gradients() {
        let tape = Tape::new();
        let x = tape.param(t((1, 1, 1, 2), &[0.3, -0.7]));
        let loss = x.scale(2.0).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);

        let tape = Tape::new();
        let x = tape.param(t((1, 1, 1, 2), &[0.3, -0.7]));
        let loss = x.add(x).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn fan_out_sums_branch_gradients() {
        // k identity branches consumed by one sum: gradient is k.
        for k in 1..6 {
            let tape = Tape::new();
            let x = tape.param(t((1, 2, 1, 1), &[1.5, -2.0]));
            let mut acc = x.scale(1.0).unwrap();
            for _ in 1..k {
                acc = acc.add(x.scale(1.0).unwrap()).unwrap();
            }
            let grads = tape.backward(acc.sum()).unwrap();
            assert_eq!(grads.get(x).unwrap().data(), &[k as f64, k as f64]);
        }
    }

    #[test]
    fn scale_by_gradients() {
        let tape = Tape::new();
        let x = tape.param(t((1, 1, 1, 3), &[1.0, 2.0, 3.0]));
        let s = tape.param(Tensor::scalar(0.5));
        let loss = x.scale_by(s).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5, 0.5]);
        assert_eq!(grads.get(s).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros((1, 1, 1, 2)));
        assert!(matches!(tape.backward(x.scale(1.0).unwrap()), Err(Error::Contract(_))));

        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaves_get_zero_gradients() {
        let tape = Tape::new();
        let x = tape.param(Tensor::ones((1, 1, 1, 2)));
        let unused = tape.param(Tensor::ones((1, 3, 1, 1)));
        let grads = tape.backward(x.sum()).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros((1, 3, 1, 1)));
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn non_grad_leaves_are_skipped() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones((1, 1, 1, 2)));
        let p = tape.param(Tensor::ones((1, 1, 1, 2)));
        let grads = tape.backward(x.mul(p).unwrap().sum()).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0]);
    }
}
