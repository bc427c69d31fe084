//! Dense row-major `f64` tensors with reverse-mode differentiation.
//!
//! Every tensor produced by an operation whose inputs require gradients keeps a
//! reference to the operation that created it. Node ids grow monotonically, so
//! sorting the reachable nodes by decreasing id yields a valid reverse
//! topological order (the tape). Gradient rules are written in terms of tensor
//! operations themselves, which makes higher-order gradients available for the
//! ops that need them (the gradient penalty differentiates a gradient norm).

mod autograd;
mod conv;
mod gradcheck;
mod kernels;
mod ops;
mod sample;
pub mod sparse;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use autograd::{backward, grad, Tape};
pub use gradcheck::{
    grad_check, grad_check_sampled, rel_error, scaled_error, GradCheckReport, SCALE_FLOOR,
};
pub use ops::{apply, OpAttrs};
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};
use ops::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operations executed on this thread are recorded for differentiation.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = GradModeGuard::set(false);
    f()
}

pub(crate) struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub(crate) fn set(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    op: Mutex<Option<Op>>,
    grad: Mutex<Option<Vec<f64>>>,
}

/// Shape-tagged dense tensor. Cloning is cheap and shares the underlying node.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(data: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            op: Mutex::new(op),
            grad: Mutex::new(None),
        }))
    }

    /// Builds a constant tensor; fails if the data length does not match the shape.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "tensor",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        if data.len() != numel(shape) {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {shape:?}", numel(shape)),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor::make(Arc::new(data), shape.to_vec(), false, None))
    }

    /// Internal constructor for op outputs whose shape is correct by construction.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        let record = is_grad_enabled() && op.inputs().iter().any(|t| t.grad_enabled());
        if record {
            Tensor::make(Arc::new(data), shape, true, Some(op))
        } else {
            Tensor::make(Arc::new(data), shape, false, None)
        }
    }

    pub(crate) fn raw(data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        Tensor::make(Arc::new(data), shape, false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(vec![v], Vec::new())
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::raw(vec![0.0; numel(shape)], shape.to_vec())
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::raw(vec![v; numel(shape)], shape.to_vec())
    }

    /// Marks this tensor as a differentiable leaf (a fresh node sharing the data).
    pub fn requires_grad(self) -> Tensor {
        Tensor::make(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// Whether gradients flow to this tensor (a grad-enabled leaf or a recorded op output).
    pub fn grad_enabled(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.lock().expect("op lock").is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                "one element",
                format!("{:?}", self.shape()),
            ));
        }
        Ok(self.0.data[0])
    }

    /// Gradient accumulated by [`backward`], if any.
    pub fn grad(&self) -> Option<Tensor> {
        let g = self.0.grad.lock().expect("grad lock");
        g.as_ref()
            .map(|v| Tensor::raw(v.clone(), self.0.shape.clone()))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn take_op(&self) -> Option<Op> {
        self.0.op.lock().expect("op lock").take()
    }

    pub(crate) fn with_op<T>(&self, f: impl FnOnce(Option<&Op>) -> T) -> T {
        let guard = self.0.op.lock().expect("op lock");
        f(guard.as_ref())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data().iter().position(|v| !v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
