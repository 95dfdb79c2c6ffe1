//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by a differentiable op keeps a reference to its
//! parents and a closure that maps the upstream gradient to per-parent
//! gradients. Node ids are drawn from a global monotone counter, so sorting
//! reachable nodes by id yields a topological order without any explicit
//! tape object living across steps.

mod conv;
pub mod gradcheck;
mod linalg;
mod nnops;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use conv::{conv1d, conv2d, conv_transpose2d};
pub use linalg::{bmm, matmul};
pub use nnops::{gelu, layer_norm, log_softmax, softmax};
pub use ops::concat;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("length mismatch {expected} vs {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("slice {start}..{end} out of range for extent {extent}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("backward requires a single-element tensor, got {0} elements")]
    NotScalar(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Maps the upstream gradient to one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    name: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Reference-counted handle; cloning shares the underlying node.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if self.numel() <= 16 {
            s.field("data", &self.to_vec());
        }
        if let Some(g) = &self.0.grad_fn {
            s.field("op", &g.name);
        }
        s.field("requires_grad", &self.0.requires_grad).finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Creates a leaf tensor. Gradient storage starts at zero when
    /// `requires_grad` is set.
    pub fn new(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape.to_vec()));
        }
        let expected = numel_of(shape);
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        let grad = requires_grad.then(|| vec![0.0; expected]);
        Ok(Tensor(Rc::new(Inner {
            id: next_id(),
            shape: shape.to_vec(),
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(grad),
            grad_fn: None,
        })))
    }

    /// Constant (non-differentiable) tensor.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(shape, data, false)
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::constant(shape, vec![0.0; numel_of(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        Tensor::constant(shape, vec![value; numel_of(shape)])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::constant(&[1], vec![value]).expect("scalar shape is valid")
    }

    /// Builds the result of an op. The backward closure is dropped when no
    /// parent participates in differentiation.
    pub(crate) fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len(), "{name}");
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            name,
            parents,
            backward,
        });
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.0.data.borrow(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Single element value; panics on multi-element tensors.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.0.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Overwrites a leaf's values. Only meaningful between training steps,
    /// once no live graph references this leaf.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::Invalid("set_data on a non-leaf tensor".into()));
        }
        let mut d = self.0.data.borrow_mut();
        if d.len() != values.len() {
            return Err(TensorError::LengthMismatch {
                expected: d.len(),
                got: values.len(),
            });
        }
        d.copy_from_slice(values);
        Ok(())
    }

    /// Returns a constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.shape(), self.to_vec()).expect("shape already validated")
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Propagates d(self)/d(leaf) into every reachable leaf that requires
    /// gradients. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.numel()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let graph = Graph::collect(self);
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in graph.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate_grad(&g),
                Some(gf) => {
                    let grads = (gf.backward)(&g);
                    debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.name);
                    for (parent, pg) in gf.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{}", gf.name);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nodes reachable from a root that participate in differentiation, in
/// ascending id order. Parents always precede their children.
pub struct Graph {
    nodes: Vec<Tensor>,
}

impl Graph {
    pub fn collect(root: &Tensor) -> Graph {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(Tensor::id);
        Graph { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in topological order; leaves show as `"leaf"`.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|t| t.0.grad_fn.as_ref().map_or("leaf", |g| g.name))
            .collect()
    }

    pub fn parents_precede_children(&self) -> bool {
        self.nodes.iter().all(|t| {
            t.0.grad_fn
                .as_ref()
                .is_none_or(|g| g.parents.iter().all(|p| p.id() < t.id()))
        })
    }
}
