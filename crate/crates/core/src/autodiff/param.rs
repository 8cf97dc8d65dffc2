use std::cell::RefCell;
use std::rc::Rc;

use ndarray::ArrayD;

struct ParamInner {
    name: String,
    value: ArrayD<f64>,
    grad: ArrayD<f64>,
}

/// A named trainable array with an accumulated gradient of the same shape.
///
/// Cloning shares the underlying storage; optimizers and the tape hold the
/// same cells the model does.
#[derive(Clone)]
pub struct Parameter(Rc<RefCell<ParamInner>>);

impl Parameter {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Parameter(Rc::new(RefCell::new(ParamInner {
            name: name.into(),
            value,
            grad,
        })))
    }

    pub fn name(&self) -> String {
        self.0.borrow().name.clone()
    }

    pub fn value(&self) -> ArrayD<f64> {
        self.0.borrow().value.clone()
    }

    /// Replace the value; the gradient is re-zeroed to the new shape.
    pub fn set_value(&self, value: ArrayD<f64>) {
        let mut inner = self.0.borrow_mut();
        inner.grad = ArrayD::zeros(value.raw_dim());
        inner.value = value;
    }

    pub fn grad(&self) -> ArrayD<f64> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad.fill(0.0);
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().value.len()
    }

    pub(super) fn accumulate_grad(&self, g: &ArrayD<f64>) {
        let mut inner = self.0.borrow_mut();
        debug_assert_eq!(inner.grad.shape(), g.shape());
        inner.grad += g;
    }

    /// In-place update with simultaneous access to value and gradient.
    pub fn apply_update(&self, f: impl FnOnce(&mut ArrayD<f64>, &ArrayD<f64>)) {
        let mut inner = self.0.borrow_mut();
        let ParamInner { value, grad, .. } = &mut *inner;
        f(value, grad);
    }

    /// Append the value's little-endian bytes (used for freeze hashing).
    pub fn extend_le_bytes(&self, out: &mut Vec<u8>) {
        let inner = self.0.borrow();
        for &v in inner.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Identity comparison: do two handles share storage?
    pub fn same_storage(&self, other: &Parameter) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

impl std::fmt::Debug for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        write!(
            f,
            "Parameter({:?}, shape {:?})",
            inner.name,
            inner.value.shape()
        )
    }
}
