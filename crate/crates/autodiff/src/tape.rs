//! The gradient tape and variable handles.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::op::{self, Op};
use crate::tensor::Tensor;
use crate::AdError;

pub type NodeId = usize;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Arithmetic precision of values recorded on a tape.
///
/// Kernels always run in `f64`. With [`Precision::F32`] every recorded
/// value and every propagated gradient is rounded to the nearest `f32`, which
/// reproduces single-precision storage semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    #[inline]
    pub(crate) fn round(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A per-step record of primitive applications.
///
/// Nodes are appended in execution order, so operands always precede the
/// nodes that consume them. A tape is meant to be rebuilt for every forward
/// pass; it is not `Sync` and independent tapes may live on separate threads.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    precision: Precision,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A 64-bit tape that records gradients.
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            precision,
            grad_enabled: true,
        }
    }

    /// A tape that records values only. Every node is a constant and saved
    /// backward state is never kept.
    pub fn inference(precision: Precision) -> Self {
        Self { grad_enabled: false, ..Self::with_precision(precision) }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A leaf that requires a gradient.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, self.grad_enabled)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn leaf(&self, mut value: Tensor, requires_grad: bool) -> Var<'_> {
        self.precision.round(value.data_mut());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op: Op::Leaf, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records the output of a primitive.
    pub(crate) fn push(&self, mut value: Tensor, op: Op) -> Var<'_> {
        self.precision.round(value.data_mut());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|&i| nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    /// Reverse sweep from a one-element `root`.
    ///
    /// Every node is visited at most once, in reverse recording order. The
    /// result holds a gradient for every gradient-requiring leaf recorded
    /// before `root` (zeros for leaves the root does not depend on).
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AdError> {
        if !self.owns(root) {
            return Err(AdError::OffTape);
        }
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(AdError::NonScalarRoot { shape: root_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(vec![1.0]);
        }
        let wants = |id: NodeId| nodes[id].requires_grad;
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = grads[id].take();
            if let Op::Leaf = node.op {
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                leaf_grads[id] = Some(Tensor::new(node.value.shape().to_vec(), data));
                continue;
            }
            let Some(g) = g else { continue };
            for (input, mut contribution) in op::backward(&node.op, &g, &node.value, &nodes, &wants) {
                if !nodes[input].requires_grad {
                    continue;
                }
                self.precision.round(&mut contribution);
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { tape_id: self.id, grads: leaf_grads })
    }
}

/// Gradients of a root with respect to the leaves of one tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf; shaped like the leaf.
    pub fn get(&self, v: Var<'_>) -> Result<&Tensor, AdError> {
        if v.tape.id != self.tape_id {
            return Err(AdError::OffTape);
        }
        self.grads.get(v.id).and_then(Option::as_ref).ok_or(AdError::NoGradient { node: v.id })
    }

    /// Iterates `(node_id, gradient)` for every gradient-requiring leaf.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().data().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    pub(crate) fn same_tape(self, other: Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands recorded on different tapes");
    }
}
