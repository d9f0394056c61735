//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Each
//! differentiable operation pushes a node holding its output value and a
//! [`Backward`] rule; [`Tape::backward`] walks the nodes in reverse push
//! order, which is a valid topological order because inputs always exist
//! before the operations that consume them.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Inputs handed to a backward rule.
pub struct BackwardArgs<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// dLoss/dOutput.
    pub grad: &'a [T],
    /// `needs[i]` is false when input `i` does not require a gradient.
    pub needs: Vec<bool>,
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns dLoss/dInput for each input, `None` where not needed.
    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<T>>,
    param: Option<ParamId>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// FNV-1a hash of every branch taken by piecewise ops, when tracking.
    branches: Option<u64>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            branches: None,
        }
    }

    /// A tape that fingerprints the branches taken by piecewise-linear ops
    /// (ReLU signs, max-pool winners). Two passes with equal fingerprints
    /// evaluated the same linear piece.
    pub fn tracking_branches() -> Self {
        Self {
            nodes: Vec::new(),
            branches: Some(FNV_OFFSET),
        }
    }

    pub fn branch_fingerprint(&self) -> Option<u64> {
        self.branches
    }

    pub(crate) fn record_branches(&mut self, choices: impl Iterator<Item = u64>) {
        if let Some(h) = &mut self.branches {
            for c in choices {
                *h = (*h ^ c).wrapping_mul(FNV_PRIME);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable parameter snapshot from `store`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let var = self.leaf(store.value(id).clone(), true);
        self.nodes[var.0].param = Some(id);
        var
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Gradients of every parameter recorded with [`Tape::param`].
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.grad.as_deref()?)))
    }

    /// Records the result of an operation. The rule is dropped when no
    /// input requires a gradient.
    pub fn push(&mut self, value: Tensor<T>, inputs: &[Var], rule: Box<dyn Backward<T>>) -> Var {
        #[cfg(debug_assertions)]
        {
            if inputs.iter().all(|v| self.nodes[v.0].value.is_finite()) {
                debug_assert!(
                    value.is_finite(),
                    "{} produced non-finite values from finite inputs",
                    rule.name()
                );
            }
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            rule: if requires_grad { Some(rule) } else { None },
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Accumulates dLoss/dLeaf into every reachable leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                // leaf
                if node.requires_grad {
                    let slot = &mut self.nodes[i].grad;
                    match slot {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                        None => *slot = Some(grad),
                    }
                }
                continue;
            };
            let args = BackwardArgs {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
            };
            let contributions = rule.backward(args);
            debug_assert_eq!(contributions.len(), node.inputs.len(), "{}", rule.name());
            for (input, contribution) in node.inputs.iter().zip(contributions) {
                let Some(contribution) = contribution else {
                    continue;
                };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(contribution.len(), self.nodes[input.0].value.len());
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, g)| *a += *g),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }
}
