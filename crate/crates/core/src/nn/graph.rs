//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Var`] is an immutable node in a dynamically built expression graph.
//! Nodes that do not depend on any gradient-requiring leaf carry no parents
//! and no backward closure, so inference graphs cost nothing beyond the
//! forward values.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

/// Maps the gradient of a node's output to gradients of each parent.
///
/// The returned vector is parallel to the node's parents; `None` means the
/// parent receives no contribution.
pub type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    grad: RefCell<Option<Vec<f64>>>,
}

/// A value in the differentiable graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Var {
    /// A constant that never receives gradients.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Var {
        assert_eq!(numel(shape), data.len(), "shape {shape:?} does not match data length");
        Var(Rc::new(Node {
            shape: shape.to_vec(),
            data: Rc::new(data),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
        }))
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Var {
        assert_eq!(numel(shape), data.len(), "shape {shape:?} does not match data length");
        Var(Rc::new(Node {
            shape: shape.to_vec(),
            data: Rc::new(data),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(&[], vec![v])
    }

    /// Builds an op node. `backward` is dropped when no parent needs gradients.
    pub fn from_op(
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        parents: &[&Var],
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward): (Vec<Var>, Option<BackwardFn>) = if requires_grad {
            (
                parents.iter().map(|p| (*p).clone()).collect(),
                Some(Box::new(backward)),
            )
        } else {
            (Vec::new(), None)
        };
        Var(Rc::new(Node {
            shape,
            data,
            requires_grad,
            parents,
            backward,
            grad: RefCell::new(None),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        self.0.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on a variable with {} elements", self.len());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient accumulated on a leaf by the last backward pass.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Drops the gradient on the value, producing a constant with the same data.
    pub fn detach(&self) -> Var {
        Var(Rc::new(Node {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
        }))
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Backpropagates from a scalar output, seeding its gradient with one.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() needs a scalar output");
        self.backward_with(vec![1.0]);
    }

    /// Backpropagates an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<f64>) {
        assert_eq!(seed.len(), self.len());
        if !self.requires_grad() {
            return;
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), seed);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            match &node.0.backward {
                Some(f) => {
                    let pgrads = f(&g);
                    debug_assert_eq!(pgrads.len(), node.0.parents.len());
                    for (parent, pg) in node.0.parents.iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.len());
                        match grads.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(parent.key(), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
    }

    /// Nodes reachable from `self` that require gradients, parents first.
    fn topo_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key(), ());
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.0.parents.len() {
                let parent = node.0.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.requires_grad() && !visited.contains_key(&parent.key()) {
                    visited.insert(parent.key(), ());
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}
