use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::{Array, Float};

type BackwardFn<T> = Box<dyn Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>>>;

struct Node<T: Float> {
    value: Arc<Array<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Tape of recorded operations. Create one per forward/backward pass.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf_rc(Arc::new(value))
    }

    pub fn leaf_rc(&self, value: Arc<Array<T>>) -> Var<'_, T> {
        self.push(Node {
            value,
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// A non-differentiable input; gradients still flow *through* ops that use it.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.constant_rc(Arc::new(value))
    }

    pub fn constant_rc(&self, value: Arc<Array<T>>) -> Var<'_, T> {
        self.push(Node {
            value,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(ndarray::arr0(value).into_dyn())
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation. `backward` receives the output gradient and a
    /// mask of which parents need a gradient, and returns one optional
    /// gradient per parent.
    pub(crate) fn op<F>(&self, value: Arc<Array<T>>, parents: &[Var<'_, T>], backward: F) -> Var<'_, T>
    where
        F: Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Array<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar `loss`. Gradients of leaf nodes are kept.
    pub fn backward(&self, loss: Var<'_, T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            nodes[loss.id].value.shape()
        );
        let mut grads: Vec<Option<Array<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array::from_elem(nodes[loss.id].value.raw_dim(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let contributions = backward(&g, &needs);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for ((&pid, contribution), need) in node.parents.iter().zip(contributions).zip(needs) {
                let Some(c) = contribution else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(c.shape(), nodes[pid].value.shape(), "gradient shape for node {pid}");
                match &mut grads[pid] {
                    Some(acc) => *acc += &c,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Grads { grads }
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<'g, T: Float> Var<'g, T> {
    pub fn value(&self) -> Arc<Array<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant_rc(self.value())
    }
}

impl<T: Float> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Result of [`Graph::backward`].
pub struct Grads<T: Float> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Array<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array::zeros(var.value().raw_dim()))
    }

    pub(crate) fn take_id(&mut self, id: usize) -> Option<Array<T>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}
