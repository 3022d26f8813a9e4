//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only tape. Every op pushes its value and, when
//! any input needs a gradient, a closure mapping the output gradient onto
//! its inputs. Tape order is a topological order, so [`Graph::backward`]
//! simply walks it in reverse.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::Tensor;

type BackwardFn = Box<dyn Fn(&Tensor, &mut GradSink<'_>)>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradient accumulator handed to backward closures.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    requires: &'a [bool],
}

impl GradSink<'_> {
    pub fn wants(&self, id: usize) -> bool {
        self.requires[id]
    }

    pub fn add(&mut self, id: usize, grad: Tensor) {
        if !self.requires[id] {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => g.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }
}

/// Gradients of the leaves of a graph with respect to one root.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, requires_grad: bool, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf; gradients are retained for it when `requires_grad`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, requires_grad, None)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Pushes an op result whose inputs are `parents`.
    pub(crate) fn op(
        &self,
        value: Tensor,
        parents: &[usize],
        backward: impl Fn(&Tensor, &mut GradSink<'_>) + 'static,
    ) -> Var<'_> {
        let rg = parents.iter().any(|&p| self.requires(p));
        self.push(value, rg, rg.then(|| Box::new(backward) as BackwardFn))
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let shape = root.value().shape().to_vec();
        assert!(
            shape.iter().product::<usize>() == 1,
            "backward() needs a scalar root, got {shape:?}; use backward_with"
        );
        self.backward_with(root, Tensor::ones(&shape))
    }

    /// Backpropagates an explicit seed gradient from `root`.
    pub fn backward_with(&self, root: Var<'_>, seed: Tensor) -> Gradients {
        assert!(std::ptr::eq(root.graph, self), "root belongs to another graph");
        let nodes = self.nodes.borrow();
        let n = root.id + 1;
        let requires: Vec<bool> = nodes[..n].iter().map(|x| x.requires_grad).collect();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if !requires[root.id] {
            return Gradients { grads };
        }
        assert_eq!(seed.shape(), nodes[root.id].value.shape(), "seed shape mismatch");
        grads[root.id] = Some(seed);
        for i in (0..n).rev() {
            let Some(bw) = &nodes[i].backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut sink = GradSink {
                grads: &mut grads,
                requires: &requires,
            };
            bw(&g, &mut sink);
        }
        Gradients { grads }
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.graph.nodes.borrow()[self.id].value.dim(axis)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    /// Detached copy of the value as a constant.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }
}
