use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Backward rule of one recorded op: given the op's input values, its output
/// value and the gradient flowing into the output, return one gradient per
/// input (`None` when an input receives nothing).
pub trait BackwardFn<T> {
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

impl<T, F> BackwardFn<T> for F
where
    F: Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Option<Tensor<T>>>,
{
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        self(inputs, output, grad)
    }
}

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<usize>,
    backward: Option<Box<dyn BackwardFn<T>>>,
    requires_grad: bool,
}

/// Wengert list of executed ops. Nodes are appended in execution order, so
/// every node's inputs precede it and a single reverse sweep is a valid
/// topological traversal.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
    first_non_finite: Cell<Option<(usize, &'static str)>>,
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            first_non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A tracked leaf; gradients are reported for it.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// An untracked leaf (inputs, labels, masks).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.record(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    /// Records an op with a caller-supplied backward rule.
    pub fn custom(
        &self,
        op: &'static str,
        inputs: &[Var<'_, T>],
        value: Tensor<T>,
        backward: impl BackwardFn<T> + 'static,
    ) -> Var<'_, T> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        self.push(op, value, ids, Box::new(backward))
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        inputs: Vec<usize>,
        backward: Box<dyn BackwardFn<T>>,
    ) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.record(Node {
            op,
            value,
            inputs,
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    fn record(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.first_non_finite.get().is_none() && !node.value.is_finite() {
            self.first_non_finite.set(Some((id, node.op)));
        }
        nodes.push(node);
        Var { tape: self, id }
    }

    /// Fails if any recorded value so far contains NaN or ±Inf.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            Some((id, op)) => Err(Error::NonFinite(format!("output of `{op}` (node {id})"))),
            None => Ok(()),
        }
    }

    /// Allows another backward pass over the same recording.
    pub fn reset(&self) {
        self.consumed.set(false);
    }

    /// Reverse sweep from a scalar `loss`. Gradients of shared inputs are summed.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Backward("loss was not recorded on this tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::Backward("backward already ran on this tape; call reset() first".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            self.consumed.set(false);
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
            let input_grads = backward.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[input].value.shape(), "op {}", node.op);
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !(node.inputs.is_empty() && node.requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Backward(format!("{op}: operands live on different tapes")))
        }
    }
}

/// Gradients of tracked leaves after one backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when nothing flowed into it.
    pub fn take_or_zeros(&mut self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(var.value().shape()),
        }
    }
}
