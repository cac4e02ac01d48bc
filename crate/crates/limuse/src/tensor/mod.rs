//! Dense N-dimensional `f64` tensors with reverse-mode autodiff.
//!
//! Values are immutable row-major buffers shared via `Rc`. A tensor is
//! *tracked* when it carries a reference to a [`Tape`] node; operations
//! whose inputs include at least one tracked tensor record a backward
//! closure on that tape. Untracked tensors compute eagerly with zero
//! bookkeeping, which is the inference path.
//!
//! Training runs in 64-bit floats so finite-difference gradient checks are
//! tight; serialization (checkpoints) rounds to 32-bit.

mod broadcast;
mod conv;
mod norm;
mod ops_elem;
mod ops_reduce;
mod ops_shape;
mod tape;

pub use conv::PadMode;
pub use norm::NormMode;
pub use tape::Tape;

pub(crate) use broadcast::{broadcast_shape, numel, reduce_to_shape};
pub(crate) use tape::{BackwardFn, GradSink, NodeId};

use std::rc::Rc;

use crate::error::{Error, Result};

/// N-dimensional array of `f64`, optionally participating in a tape.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) node: Option<(Tape, NodeId)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, tracked={}, data[..4]={:?})",
            self.shape,
            self.node.is_some(),
            &self.data[..self.data.len().min(4)]
        )
    }
}

impl Tensor {
    // ── Constructors ─────────────────────────────────────────────────

    /// Untracked tensor from raw data.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::invalid(
                "from_vec",
                format!("data length {} != product of shape {:?}", data.len(), shape),
            ));
        }
        Ok(Tensor { data: Rc::new(data), shape: shape.to_vec(), node: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { data: Rc::new(vec![0.0; numel(shape)]), shape: shape.to_vec(), node: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { data: Rc::new(vec![v]), shape: vec![1], node: None }
    }

    /// Tracked leaf on `tape`. Leaves receive gradients during backward.
    pub fn leaf(tape: &Tape, data: Rc<Vec<f64>>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::invalid(
                "leaf",
                format!("data length {} != product of shape {:?}", data.len(), shape),
            ));
        }
        let id = tape.push(Rc::clone(&data), None, "leaf");
        Ok(Tensor { data, shape: shape.to_vec(), node: Some((tape.clone(), id)) })
    }

    pub fn leaf_from_vec(tape: &Tape, data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(tape, Rc::new(data), shape)
    }

    /// Untracked tensor sharing an existing buffer (no copy).
    pub fn from_shared(data: Rc<Vec<f64>>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::invalid(
                "from_shared",
                format!("data length {} != product of shape {:?}", data.len(), shape),
            ));
        }
        Ok(Tensor { data, shape: shape.to_vec(), node: None })
    }

    // ── Accessors ────────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Copy of this tensor cut loose from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor { data: Rc::clone(&self.data), shape: self.shape.clone(), node: None }
    }

    /// Attach a diagnostic label to this tensor's tape node (no-op when
    /// untracked). Labels show up in NaN diagnostics.
    pub fn named(self, label: &str) -> Tensor {
        if let Some((tape, id)) = &self.node {
            tape.set_label(*id, label.to_string());
        }
        self
    }

    // ── Autodiff ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar. Populates gradients of every reachable
    /// leaf on the tape. Erroring cases: non-scalar, untracked, or a tape
    /// that already ran backward.
    pub fn backward(&self) -> Result<()> {
        if self.data.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape),
            ));
        }
        match &self.node {
            Some((tape, id)) => tape.backward_from(*id),
            None => Err(Error::invalid("backward", "tensor is not tracked on any tape")),
        }
    }

    /// Gradient accumulated in the last backward pass, if any reached this
    /// tensor. Detached tensors have no gradient.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.as_ref().and_then(|(tape, id)| tape.grad_of(*id))
    }

    // ── Internal plumbing shared by the op modules ───────────────────

    /// Tape shared by the given tracked inputs, checking consistency.
    pub(crate) fn result_tape(op: &'static str, inputs: &[&Tensor]) -> Result<Option<Tape>> {
        let mut found: Option<&Tape> = None;
        for t in inputs {
            if let Some((tape, _)) = &t.node {
                match found {
                    None => found = Some(tape),
                    Some(prev) => {
                        if !prev.same_as(tape) {
                            return Err(Error::invalid(op, "inputs live on different tapes"));
                        }
                    }
                }
            }
        }
        Ok(found.cloned())
    }

    pub(crate) fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Register `data` as the output of `op`, recording `backward` when any
    /// input was tracked.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        tape: Option<Tape>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        let data = Rc::new(data);
        let node = tape.map(|t| {
            let id = t.push(Rc::clone(&data), backward, op);
            (t, id)
        });
        Tensor { data, shape, node }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_grad_populated_after_backward() {
        let tape = Tape::new();
        let x = Tensor::leaf_from_vec(&tape, vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap(); // x^2
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]); // d(x^2)/dx at 3
    }

    #[test]
    fn double_backward_is_error() {
        let tape = Tape::new();
        let x = Tensor::leaf_from_vec(&tape, vec![2.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert!(matches!(y.backward(), Err(Error::DoubleBackward)));
        tape.reset();
        assert!(y.backward().is_ok());
    }

    #[test]
    fn detached_tensor_has_no_grad() {
        let tape = Tape::new();
        let x = Tensor::leaf_from_vec(&tape, vec![2.0], &[1]).unwrap();
        let d = x.detach();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert!(d.grad().is_none());
        assert!(!d.requires_grad());
    }

    #[test]
    fn untracked_ops_do_not_touch_tape() {
        let tape = Tape::new();
        let _x = Tensor::leaf_from_vec(&tape, vec![1.0], &[1]).unwrap();
        let before = tape.num_nodes();
        let a = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[4.0, 6.0]);
        assert!(!c.requires_grad());
        assert_eq!(tape.num_nodes(), before);
    }

    #[test]
    fn mixed_tape_inputs_error() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = Tensor::leaf_from_vec(&t1, vec![1.0], &[1]).unwrap();
        let b = Tensor::leaf_from_vec(&t2, vec![1.0], &[1]).unwrap();
        assert!(a.add(&b).is_err());
    }
}
