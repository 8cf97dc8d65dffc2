use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn};
use thiserror::Error;

use super::param::Parameter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in `{op}`: left operand has shape {lhs:?}, right operand has shape {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("`{op}` expects {expected}, got shape {actual:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        actual: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("backward already ran on this tape; call `clear` before reusing it")]
    BackwardConsumed,
    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),
    #[error("operands were recorded on different tapes")]
    TapeMismatch,
}

/// What to do when an operation produces a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FiniteCheck {
    /// Let NaN/Inf flow through; callers inspect results (training aborts
    /// on a non-finite loss).
    #[default]
    Propagate,
    /// Fail the recording op immediately. Debugging aid.
    Error,
}

pub(super) type Value = Rc<ArrayD<f64>>;
/// Maps the upstream gradient to one contribution per parent, in parent order.
pub(super) type BackwardFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<ArrayD<f64>>>;

pub(super) struct Node {
    pub value: Value,
    pub parents: Vec<usize>,
    pub backward: Option<BackwardFn>,
    pub param: Option<Parameter>,
    /// True when a parameter leaf is reachable; backward skips the rest.
    pub needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    recording: bool,
    finite_check: FiniteCheck,
    backward_done: bool,
}

/// Recording context for reverse-mode differentiation.
///
/// Cloning is cheap (shared handle). Recording is confined to one logical
/// execution context; the tape is not `Send`.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
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
                recording: true,
                ..Default::default()
            })),
        }
    }

    /// Disable recording for inference: values are identical, no backward
    /// closures are kept.
    pub fn eval() -> Self {
        let t = Tape::new();
        t.set_recording(false);
        t
    }

    pub fn set_recording(&self, on: bool) {
        self.inner.borrow_mut().recording = on;
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    pub fn set_finite_check(&self, mode: FiniteCheck) {
        self.inner.borrow_mut().finite_check = mode;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all records and re-arm backward.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.backward_done = false;
    }

    pub fn constant(&self, value: ArrayD<f64>) -> Tensor {
        self.push_leaf(value, None)
    }

    pub fn scalar(&self, value: f64) -> Tensor {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    /// Record a trainable leaf; backward accumulates into `param.grad`.
    pub fn param(&self, param: &Parameter) -> Tensor {
        self.push_leaf(param.value(), Some(param.clone()))
    }

    fn push_leaf(&self, value: ArrayD<f64>, param: Option<Parameter>) -> Tensor {
        let recording = self.is_recording();
        self.push_node(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            param: if recording { param } else { None },
            needs_grad: false,
        })
        .expect("leaf push cannot fail")
    }

    pub(super) fn push_node(&self, mut node: Node) -> Result<Tensor, AutodiffError> {
        let mut inner = self.inner.borrow_mut();
        if inner.finite_check == FiniteCheck::Error && !node.value.iter().all(|v| v.is_finite())
        {
            return Err(AutodiffError::NonFinite("tape op"));
        }
        node.needs_grad = node.param.is_some()
            || node
                .parents
                .iter()
                .any(|&p| inner.nodes[p].needs_grad);
        inner.nodes.push(node);
        Ok(Tensor {
            tape: self.clone(),
            node: inner.nodes.len() - 1,
        })
    }

    /// Record an operation whose gradient is supplied by a hand-written
    /// vector-Jacobian product instead of primitive composition. Used by the
    /// rasterizer, whose adjoint is analytic for tractability.
    pub fn custom_op(
        &self,
        inputs: &[&Tensor],
        value: ArrayD<f64>,
        vjp: impl Fn(&ArrayD<f64>) -> Vec<ArrayD<f64>> + 'static,
    ) -> Tensor {
        let recording = self.is_recording();
        let parents = inputs.iter().map(|t| t.node).collect();
        self.push_node(Node {
            value: Rc::new(value),
            parents,
            backward: if recording { Some(Box::new(vjp)) } else { None },
            param: None,
            needs_grad: false,
        })
        .expect("custom op push cannot fail")
    }

    pub(super) fn value_of(&self, node: usize) -> Value {
        Rc::clone(&self.inner.borrow().nodes[node].value)
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Reverse sweep from a scalar output. Gradients of reachable parameters
    /// are accumulated (added) into their `grad` buffers; callers zero them
    /// between steps.
    pub fn backward(&self, output: &Tensor) -> Result<(), AutodiffError> {
        if !self.same_tape(&output.tape) {
            return Err(AutodiffError::TapeMismatch);
        }
        {
            let mut inner = self.inner.borrow_mut();
            if inner.backward_done {
                return Err(AutodiffError::BackwardConsumed);
            }
            let out_val = &inner.nodes[output.node].value;
            if out_val.len() != 1 {
                return Err(AutodiffError::NonScalarOutput(out_val.shape().to_vec()));
            }
            inner.backward_done = true;
        }

        let inner = self.inner.borrow();
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; output.node + 1];
        let seed_shape = inner.nodes[output.node].value.shape().to_vec();
        grads[output.node] = Some(ArrayD::from_elem(IxDyn(&seed_shape), 1.0));

        for i in (0..=output.node).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &inner.nodes[i];
            if let Some(p) = &node.param {
                p.accumulate_grad(&grad);
            }
            if let Some(bw) = &node.backward {
                let contribs = bw(&grad);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (&pidx, contrib) in node.parents.iter().zip(contribs) {
                    if !inner.nodes[pidx].needs_grad {
                        continue;
                    }
                    match &mut grads[pidx] {
                        Some(acc) => *acc += &contrib,
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Handle to one tape record. Cloning shares the record.
#[derive(Clone)]
pub struct Tensor {
    pub(super) tape: Tape,
    pub(super) node: usize,
}

impl Tensor {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Clone of the recorded value.
    pub fn value(&self) -> ArrayD<f64> {
        (*self.tape.value_of(self.node)).clone()
    }

    /// Shared reference to the recorded value (no copy).
    pub fn value_ref(&self) -> Rc<ArrayD<f64>> {
        self.tape.value_of(self.node)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.node).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value_of(self.node).len()
    }

    /// Value of a 0-d (or single-element) tensor.
    pub fn scalar_value(&self) -> f64 {
        let v = self.tape.value_of(self.node);
        debug_assert_eq!(v.len(), 1, "scalar_value on non-scalar tensor");
        *v.iter().next().expect("non-empty")
    }

    pub(super) fn same_tape(&self, other: &Tensor) -> bool {
        self.tape.same_tape(&other.tape)
    }
}

/// Numpy-style broadcast of two shapes; `None` when incompatible.
pub(super) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i + a.len() < rank { 1 } else { a[i + a.len() - rank] };
        let db = if i + b.len() < rank { 1 } else { b[i + b.len() - rank] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sum a gradient back down to `shape` (adjoint of broadcasting).
pub(super) fn reduce_to_shape(grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if shape[ax] == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    debug_assert_eq!(g.shape(), shape);
    g
}
