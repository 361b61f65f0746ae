//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted array. Any operation whose
//! inputs include a tensor with `requires_grad` records a graph node holding
//! its parents, so calling [`Tensor::backward`] on a scalar result walks the
//! graph in reverse creation order and accumulates adjoints into the
//! gradient-requiring leaves.
//!
//! Broadcasting is limited to two cases: a scalar (shape `[]`) against any
//! shape, and a tensor whose shape is a suffix of the other's (a leading batch
//! dimension). Every other shape mix is an error.

mod backward;
pub mod checkpoint;
mod gradcheck;
mod ops;
pub mod optim;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use backward::Gradients;
pub use gradcheck::grad_check;
pub use optim::{adam_step, clip_grad_norm, Adam, AdamConfig, OptimState};

/// Errors raised by tensor operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: value {value} outside the domain of the function")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_DISABLED: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` without recording graph nodes on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_DISABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_DISABLED.with(|g| g.replace(true)));
    f()
}

/// Unique, monotonically increasing identifier of a tensor.
///
/// A tensor's id is always larger than the ids of its graph parents, so
/// sorting by id yields a topological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

/// Derivative of a user-supplied elementwise function, given `(x, f(x))`.
pub type ElementwiseDerivative = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Minimum,
    MatMul,
    Neg,
    Scale(f64),
    AddScalar,
    Tanh,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Clamp { lo: f64, hi: f64 },
    Sum,
    Mean,
    SumLast,
    Softmax,
    LogSoftmax,
    GatherRows(Arc<[usize]>),
    Concat,
    SliceCols { start: usize },
    Broadcast,
    Reshape,
    Elementwise(ElementwiseDerivative),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Minimum => "minimum",
            Op::MatMul => "matmul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Clamp { .. } => "clamp",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumLast => "sum_last",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::GatherRows(_) => "gather_rows",
            Op::Concat => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Broadcast => "broadcast",
            Op::Reshape => "reshape",
            Op::Elementwise(_) => "elementwise",
        }
    }
}

pub(crate) struct GraphNode {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

pub(crate) struct Inner {
    pub(crate) id: TensorId,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Mutex<Option<Vec<f64>>>,
    pub(crate) node: Option<GraphNode>,
}

/// Reference-counted n-dimensional array of `f64` values.
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<GraphNode>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Creates a constant tensor. Fails when `data.len()` does not match the shape.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::Invalid {
                op: "new",
                msg: format!("shape {:?} holds {} values, got {}", shape, numel(shape), data.len()),
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Creates a gradient-requiring leaf (a trainable parameter).
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.into_leaf(true))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::build(vec![n], data, false, None)
    }

    /// Creates a `[rows, cols]` constant from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    fn into_leaf(self, requires_grad: bool) -> Self {
        match Arc::try_unwrap(self.0) {
            Ok(inner) => Self::build(inner.shape, inner.data, requires_grad, None),
            Err(shared) => Self::build(shared.shape.clone(), shared.data.clone(), requires_grad, None),
        }
    }

    /// Returns a new leaf with the same values and no graph history.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Returns a fresh gradient-requiring leaf holding a copy of the values.
    pub fn to_parameter(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub fn id(&self) -> TensorId {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[&Tensor]) -> Self {
        let requires_grad = !GRAD_DISABLED.with(Cell::get) && parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| GraphNode {
            op,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
        });
        Self::build(shape, data, requires_grad, node)
    }
}

/// Zeroes the accumulated gradients of every tensor in `params`.
pub fn zero_grads<'a>(params: impl IntoIterator<Item = &'a Tensor>) {
    for p in params {
        p.zero_grad();
    }
}
