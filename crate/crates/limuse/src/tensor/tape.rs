//! Wengert tape for reverse-mode automatic differentiation.
//!
//! Every tracked operation appends one node holding the output value and a
//! backward closure. Nodes are pushed in forward execution order, so walking
//! the list in reverse visits each node exactly once in reverse topological
//! order (an op's inputs always precede it on the tape).

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Index of a node on its tape.
pub type NodeId = usize;

/// Backward closure: receives the output gradient and accumulates input
/// gradients into the sink.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink)>;

pub(crate) struct Node {
    /// Saved output value (also used for NaN diagnostics).
    pub data: Rc<Vec<f64>>,
    /// None for leaves.
    pub backward: Option<BackwardFn>,
    pub op: &'static str,
    /// Optional human-readable label (layer path), set via `Tensor::named`.
    pub label: Option<String>,
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
    /// Populated by `backward`; leaf gradients stay here until reset.
    pub grads: Vec<Option<Vec<f64>>>,
    pub ran_backward: bool,
}

/// Gradient accumulator handed to backward closures.
pub(crate) struct GradSink<'a> {
    grads: &'a mut Vec<Option<Vec<f64>>>,
}

impl GradSink<'_> {
    /// Add a contribution to node `id`, elementwise.
    pub fn add(&mut self, id: NodeId, contribution: Vec<f64>) {
        match &mut self.grads[id] {
            Some(existing) => {
                debug_assert_eq!(existing.len(), contribution.len());
                for (e, c) in existing.iter_mut().zip(contribution.iter()) {
                    *e += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    /// Borrow (creating if absent) the gradient buffer for in-place accumulation.
    pub fn buf(&mut self, id: NodeId, len: usize) -> &mut [f64] {
        self.grads[id].get_or_insert_with(|| vec![0.0; len])
    }
}

/// A recording of one forward pass. Single-threaded by construction
/// (`Rc`-shared between the tensors it produced).
#[derive(Clone)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                ran_backward: false,
            })),
        }
    }

    pub(crate) fn push(
        &self,
        data: Rc<Vec<f64>>,
        backward: Option<BackwardFn>,
        op: &'static str,
    ) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { data, backward, op, label: None });
        inner.nodes.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Same tape? (ops refuse to mix tensors from different tapes)
    pub(crate) fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Run the reverse pass seeding node `loss` with gradient 1.
    ///
    /// Walks nodes strictly once, in reverse push order. Interior gradients
    /// are dropped as soon as they are consumed; leaf gradients remain
    /// readable through `Tensor::grad` until `reset`.
    pub(crate) fn backward_from(&self, loss: NodeId) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.ran_backward {
            return Err(Error::DoubleBackward);
        }
        inner.ran_backward = true;
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);

        let TapeInner { nodes, .. } = &mut *inner;
        for id in (0..=loss).rev() {
            if nodes[id].backward.is_none() {
                continue; // leaf: keep its gradient
            }
            let Some(g) = grads[id].take() else { continue };
            let f = nodes[id].backward.as_ref().unwrap();
            f(&g, &mut GradSink { grads: &mut grads });
        }
        inner.grads = grads;
        Ok(())
    }

    /// Clear gradients and allow another backward pass.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.grads.clear();
        inner.ran_backward = false;
    }

    /// Scan node outputs in creation order for the first non-finite value;
    /// returns a description suitable for a numeric-failure diagnostic.
    pub fn first_non_finite(&self) -> Option<String> {
        let inner = self.inner.borrow();
        let mut last_label: Option<&str> = None;
        for (id, node) in inner.nodes.iter().enumerate() {
            if let Some(l) = node.label.as_deref() {
                last_label = Some(l);
            }
            if node.data.iter().any(|v| !v.is_finite()) {
                let near = node
                    .label
                    .as_deref()
                    .or(last_label)
                    .unwrap_or("<unlabelled>");
                return Some(format!("node #{id} op `{}` near layer `{near}`", node.op));
            }
        }
        None
    }

    pub(crate) fn set_label(&self, id: NodeId, label: String) {
        self.inner.borrow_mut().nodes[id].label = Some(label);
    }

    pub(crate) fn grad_of(&self, id: NodeId) -> Option<Vec<f64>> {
        self.inner.borrow().grads.get(id).cloned().flatten()
    }
}
