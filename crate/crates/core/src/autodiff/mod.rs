//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Nodes
//! are appended in creation order, which is already a topological order, so
//! [`Graph::backward`] walks the tape once in reverse and visits each node at
//! most once.
//!
//! ```
//! use mixq::autodiff::Graph;
//! use mixq::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.param(Tensor::scalar(4.0));
//! let loss = g.mul(x, y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 4.0);
//! assert_eq!(grads.get(y).unwrap().item().unwrap(), 3.0);
//! ```

mod conv;
mod norm;
mod ops;

pub use conv::ConvGeom;
pub use norm::{BatchStats, BnMode};
pub use ops::PoolGeom;
pub(crate) use ops::softmax_in_place as softmax_row;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Dense { x: Var, w: Var },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    BatchNorm(Box<norm::BnTape>),
    MaxPool2d { x: Var, argmax: Vec<usize> },
    AvgPool2d { x: Var, pool: PoolGeom },
    Softmax(Var),
    WeightedSum { xs: Vec<Var>, weights: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    FakeQuant { w: Var, clip: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with `requires_grad`; leaves the loss does
    /// not depend on get an all-zero gradient.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_node.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.by_node.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Accumulates upstream gradients into parent slots during the reverse sweep.
pub(crate) struct GradSink<'g> {
    grads: &'g mut [Option<Tensor>],
    nodes: &'g [Node],
}

impl GradSink<'_> {
    pub fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn add(&mut self, var: Var, grad: Tensor) {
        if !self.wants(var) {
            return;
        }
        match &mut self.grads[var.0] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn add_slice(&mut self, var: Var, grad: &[f64]) {
        if !self.wants(var) {
            return;
        }
        let shape = self.nodes[var.0].value.shape().to_vec();
        match &mut self.grads[var.0] {
            Some(existing) => existing.add_assign_slice(grad),
            slot @ None => *slot = Some(Tensor::new(shape, grad.to_vec()).expect("gradient shape")),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf tensor; `requires_grad` leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        let mut leaf_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let mut sink = GradSink {
                grads: &mut grads,
                nodes: &self.nodes,
            };
            match &node.op {
                Op::Leaf => leaf_grads[idx] = Some(upstream),
                Op::Conv2d { x, w, geom } => conv::backward(self, *x, *w, geom, &upstream, &mut sink),
                Op::BatchNorm(tape) => norm::backward(self, tape, &upstream, &mut sink),
                op => ops::backward(self, node, op, upstream, &mut sink),
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaf_grads[idx].is_none() {
                leaf_grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_node: leaf_grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.param(Tensor::scalar(4.0));
        let l = g.mul(x, y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 4.0);
        assert_eq!(grads.get(y).unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::ones(&[4]));
        let l = g.scale(x, 3.0);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[4]));
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // l = x*x + x  → dl/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(5.0));
        let sq = g.mul(x, x).unwrap();
        let l = g.add(sq, x).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 11.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(1.5));
        let l = g.mul(c, x).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 2.0);
    }
}
