use super::{Real, Tensor};
use crate::{Error, Result};
use std::cell::{Cell, Ref, RefCell};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes parent gradients from `(parent values, output value, output grad)`.
pub type BackwardFn<T> = Box<dyn FnOnce(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Records a forward computation so it can be differentiated once.
///
/// Operations append nodes in execution order, so the node list is already a
/// topological order and backward simply walks it in reverse. A tape supports
/// exactly one backward pass.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grads: RefCell::new(Vec::new()), consumed: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input. Gradients are tracked when `tensor.requires_grad` is set.
    pub fn leaf(&self, tensor: &Tensor<T>) -> Var {
        let mut value = tensor.clone();
        value.grad = None;
        let requires_grad = tensor.requires_grad;
        self.push_node("leaf", value, Vec::new(), requires_grad, None)
    }

    /// Records an input that gradients flow into.
    pub fn param(&self, tensor: &Tensor<T>) -> Var {
        let mut value = tensor.clone();
        value.grad = None;
        value.requires_grad = true;
        self.push_node("leaf", value, Vec::new(), true, None)
    }

    /// Records a constant input that never receives a gradient.
    pub fn constant(&self, tensor: Tensor<T>) -> Var {
        let mut value = tensor;
        value.requires_grad = false;
        value.grad = None;
        self.push_node("constant", value, Vec::new(), false, None)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    /// Appends an operation whose value has already been computed.
    ///
    /// `backward` receives the parent values, the output value and the output
    /// gradient, and returns one optional gradient per parent.
    pub fn custom(&self, op: &'static str, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        self.record(op, value, parents, backward)
    }

    pub(crate) fn record(&self, op: &'static str, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        let parents = parents.iter().map(|p| p.0).collect();
        let backward = if requires_grad { Some(backward) } else { None };
        self.push_node(op, value, parents, requires_grad, backward)
    }

    fn push_node(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, parents, requires_grad, backward });
        Var(nodes.len() - 1)
    }

    /// First node, in recording order, holding a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes.borrow().iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(i, n)| (i, n.op))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients accumulate additively when a value feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<()> {
        if self.consumed.replace(true) {
            return Err(Error::Tape("tape already consumed by a previous backward pass".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !nodes[i].requires_grad {
                grads[i] = Some(gout);
                continue;
            }
            if let Some(f) = nodes[i].backward.take() {
                let node = &nodes[i];
                let parents: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &nodes[p].value).collect();
                let pgrads = f(&parents, &node.value, &gout);
                debug_assert_eq!(pgrads.len(), node.parents.len(), "backward arity of {}", node.op);
                for (&p, g) in node.parents.iter().zip(pgrads) {
                    let Some(g) = g else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.len(), nodes[p].value.numel(), "gradient size from {}", node.op);
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            // only leaf gradients are retained; intermediates are released as the sweep passes them
            if nodes[i].parents.is_empty() {
                grads[i] = Some(gout);
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the loss with respect to the leaf `v` after [`Tape::backward`].
    ///
    /// Returns zeros for leaves that require grad but were not reached, and
    /// `None` for non-leaf values.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        if !node.requires_grad || !node.parents.is_empty() || !self.consumed.get() {
            return None;
        }
        let shape = node.value.shape().to_vec();
        match self.grads.borrow().get(v.0).and_then(|g| g.clone()) {
            Some(g) => Some(Tensor::from_parts(shape, g)),
            None => Some(Tensor::zeros(&shape)),
        }
    }

    /// Copies the gradient of `v` into `target.grad`, accumulating with any existing gradient.
    pub fn accumulate_grad_into(&self, v: Var, target: &mut Tensor<T>) -> Result<()> {
        let g = self.grad(v).ok_or_else(|| Error::Tape("no gradient recorded".into()))?;
        if g.shape() != target.shape() {
            return Err(Error::shape("accumulate_grad_into", "gradient shape differs from target"));
        }
        match &mut target.grad {
            Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g.into_data()),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let tape = Tape::<f64>::new();
        let t = Tensor::from_fn(&[4], |i| i as f64 * 0.5 - 1.0);
        let x = tape.param(&t);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let expected: Vec<f64> = t.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn reused_tape_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::ones(&[2]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::ones(&[3]));
        let c = tape.constant(Tensor::full(&[3], 2.0));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0; 3]);
    }
}
