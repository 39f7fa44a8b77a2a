//! Dense f32 tensors with tape-based reverse-mode automatic differentiation.
//!
//! Tensors are cheap-to-clone handles (`Rc` inside) around a flat row-major
//! buffer plus shape metadata. Differentiable ops record a backward closure on
//! the output tensor; [`backward`] walks the recorded graph in exact reverse
//! execution order and accumulates gradients into every grad-enabled ancestor.
//! The recorded graph is consumed by `backward`, so nothing survives into the
//! next training step.
//!
//! Limits: up to 4 dimensions (batch x channel x height x width for image
//! tensors), no broadcasting beyond scalar ops, no higher-order derivatives,
//! single-threaded graph construction.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::*;
pub use tape::{backward, Tape};

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Errors raised by tensor construction and ops.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeValueMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: shapes {lhs:?} and {rhs:?} do not match")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got {actual}")]
    BadArgument {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{op}: channel mismatch ({detail})")]
    ChannelMismatch { op: &'static str, detail: String },
    #[error("{op}: output dimension would be <= 0 for input {input:?}")]
    OutputTooSmall { op: &'static str, input: Vec<usize> },
    #[error("log: input contains a non-positive value ({value}); clamp first")]
    NonPositiveLog { value: f32 },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: tape already consumed by a previous backward call")]
    ConsumedTape,
    #[error("grad_check: function produced a non-finite value {0}")]
    NonFiniteValue(f32),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_SEQ: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_MODE: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread.
///
/// Used for inference-only forward passes and for the function re-evaluations
/// inside finite-difference checks.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_MODE.with(|m| m.set(self.0));
        }
    }
    let _restore = Restore(GRAD_MODE.with(|m| m.replace(false)));
    f()
}

fn grad_mode() -> bool {
    GRAD_MODE.with(|m| m.get())
}

pub(crate) struct Node {
    /// Monotone sequence number assigned at recording time; backward replays
    /// nodes in decreasing order, i.e. exact reverse execution order.
    pub seq: u64,
    pub parents: Vec<Tensor>,
    /// Receives the output gradient and accumulates into the parents.
    pub backward: Box<dyn Fn(&[f32])>,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    grad_enabled: bool,
    node: RefCell<Option<Node>>,
    /// Set once backward has consumed the node; guards double-backward.
    consumed: Cell<bool>,
}

/// Dense f32 tensor handle. Cloning shares the underlying buffer.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("grad_enabled", &self.inner.grad_enabled)
            .finish()
    }
}

impl Tensor {
    fn new_inner(shape: Vec<usize>, data: Vec<f32>, grad_enabled: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                grad_enabled,
                node: RefCell::new(None),
                consumed: Cell::new(false),
            }),
        }
    }

    /// Builds a tensor holding exactly `values`.
    pub fn from_vec(shape: &[usize], values: Vec<f32>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::ShapeValueMismatch {
                shape: shape.to_vec(),
                expected,
                actual: values.len(),
            });
        }
        Ok(Tensor::new_inner(shape.to_vec(), values, false))
    }

    /// All-zeros tensor.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new_inner(shape.to_vec(), vec![0.0; n], false)
    }

    /// All-ones tensor.
    pub fn ones(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new_inner(shape.to_vec(), vec![1.0; n], false)
    }

    /// Constant-filled tensor.
    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new_inner(shape.to_vec(), vec![value; n], false)
    }

    /// Scalar (rank-0) tensor.
    pub fn scalar(value: f32) -> Tensor {
        Tensor::new_inner(Vec::new(), vec![value], false)
    }

    /// Standard-normal samples, deterministic per `(shape, seed)`.
    pub fn randn(shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f32>>();
        Tensor::new_inner(shape.to_vec(), data, false)
    }

    /// Standard-normal samples drawn from a caller-provided RNG.
    pub fn randn_with(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f32>>();
        Tensor::new_inner(shape.to_vec(), data, false)
    }

    /// Marks this (leaf) tensor as requiring gradients and returns it.
    pub fn requires_grad(self) -> Tensor {
        debug_assert!(
            self.inner.node.borrow().is_none(),
            "requires_grad is for leaf tensors"
        );
        Tensor {
            inner: Rc::new(Inner {
                shape: self.inner.shape.clone(),
                data: RefCell::new(self.inner.data.borrow().clone()),
                grad: RefCell::new(None),
                grad_enabled: true,
                node: RefCell::new(None),
                consumed: Cell::new(false),
            }),
        }
    }

    /// Result tensor of a differentiable op. Records a backward node when
    /// grad mode is on and any parent is grad-enabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: &[&Tensor],
        backward: impl Fn(&[f32]) + 'static,
    ) -> Tensor {
        let record = grad_mode() && parents.iter().any(|p| p.inner.grad_enabled);
        let out = Tensor::new_inner(shape, data, record);
        if record {
            let node = Node {
                seq: NEXT_SEQ.fetch_add(1, Ordering::Relaxed),
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: Box::new(backward),
            };
            *out.inner.node.borrow_mut() = Some(node);
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.grad_enabled
    }

    /// Borrows the data buffer.
    pub fn data(&self) -> std::cell::Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    /// Mutably borrows the data buffer (parameter updates between steps).
    pub fn data_mut(&self) -> std::cell::RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    /// Copies the data out.
    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() requires a scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Copies the gradient out, if populated.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    /// Clears the gradient buffer.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Adds `delta` into the gradient buffer; no-op on non-grad tensors.
    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        if !self.inner.grad_enabled {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    pub(crate) fn take_node(&self) -> Option<Node> {
        self.inner.node.borrow_mut().take()
    }

    pub(crate) fn has_node(&self) -> bool {
        self.inner.node.borrow().is_some()
    }

    pub(crate) fn mark_consumed(&self) {
        self.inner.consumed.set(true);
    }

    pub(crate) fn is_consumed(&self) -> bool {
        self.inner.consumed.get()
    }
}

pub(crate) fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_are_zero() {
        let t = Tensor::zeros(&[2, 2]);
        assert_eq!(t.to_vec(), vec![0.0; 4]);
        assert_eq!(t.shape(), &[2, 2]);
    }

    #[test]
    fn randn_is_deterministic_per_seed() {
        let a = Tensor::randn(&[4], 7);
        let b = Tensor::randn(&[4], 7);
        assert_eq!(a.to_vec(), b.to_vec());
        let c = Tensor::randn(&[4], 8);
        assert_ne!(a.to_vec(), c.to_vec());
    }

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(&[3], vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeValueMismatch { .. }));
    }

    #[test]
    fn from_vec_roundtrips_values() {
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.to_vec().iter().sum::<f32>(), 6.0);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::ones(&[2]).requires_grad();
        let y = no_grad(|| crate::tensor::scalar_mul(&x, 2.0));
        assert!(!y.grad_enabled());
        assert!(!y.has_node());
    }
}
