use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::buffer::Buffer;
use crate::error::{Result, TensorError};

/// Gradient rule of a recorded op.
///
/// Called once with the gradient of the op output and a flag per input
/// telling whether that input wants a gradient. Returns one entry per input,
/// `None` where nothing flows.
pub type BackwardFn = Box<dyn FnOnce(&[f64], &[bool]) -> Vec<Option<Buffer>>>;

pub(crate) struct Node {
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    /// No gradient is tracked.
    Constant,
    /// Leaf that accumulates gradient across backward passes.
    Parameter,
    /// Output of a recorded op; gradient is transient.
    Intermediate,
}

pub(crate) struct Inner {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Buffer>,
    pub(crate) grad: RefCell<Option<Buffer>>,
    pub(crate) node: RefCell<Option<Node>>,
    pub(crate) kind: Kind,
}

/// Dense row-major `f64` tensor with an optional place in a backward graph.
///
/// Cloning is cheap and shares storage. A tensor is owned by the thread that
/// built it; parallel work uses separate graphs.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Inner>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording any ops.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Buffer, kind: Kind, node: Option<Node>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            node: RefCell::new(node),
            kind,
        }))
    }

    fn check_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
        if shape.contains(&0) {
            return Err(TensorError::contract(op, format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != len {
            return Err(TensorError::contract(
                op,
                format!("shape {shape:?} needs {} values, got {len}", numel(shape)),
            ));
        }
        Ok(())
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::check_shape("tensor", shape, data.len())?;
        Ok(Self::build(shape.to_vec(), Buffer::from_vec(data), Kind::Constant, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), Buffer::zeros(numel(shape)), Kind::Constant, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), Buffer::filled(numel(shape), value), Kind::Constant, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], Buffer::from_vec(vec![value]), Kind::Constant, None)
    }

    /// Trainable leaf. Gradients accumulate into it until [`Tensor::zero_grad`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::check_shape("param", shape, data.len())?;
        Ok(Self::build(shape.to_vec(), Buffer::from_vec(data), Kind::Parameter, None))
    }

    /// Output of a custom op.
    ///
    /// The op is recorded only when grad mode is on and at least one input
    /// wants a gradient; otherwise `backward` is dropped and the result is a
    /// constant.
    pub fn from_op(shape: Vec<usize>, data: Buffer, inputs: &[&Tensor], backward: BackwardFn) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "op produced {} values for shape {shape:?}",
            data.len()
        );
        if is_grad_enabled() && inputs.iter().any(|t| t.requires_grad()) {
            let node = Node {
                inputs: inputs.iter().map(|&t| t.clone()).collect(),
                backward,
            };
            Self::build(shape, data, Kind::Intermediate, Some(node))
        } else {
            Self::build(shape, data, Kind::Constant, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Buffer> {
        self.0.data.borrow()
    }

    /// Mutable access to the payload. Meant for optimisers and probes; it
    /// does not invalidate graphs that already captured this tensor.
    pub fn data_mut(&self) -> RefMut<'_, Buffer> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.kind != Kind::Constant
    }

    pub fn is_param(&self) -> bool {
        self.0.kind == Kind::Parameter
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().as_ref().map(|g| g.to_vec())
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Buffer>> {
        self.0.grad.borrow()
    }

    pub fn grad_mut(&self) -> RefMut<'_, Option<Buffer>> {
        self.0.grad.borrow_mut()
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// Constant copy of the current value.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.data().clone(), Kind::Constant, None)
    }

    /// Stable identity of the underlying storage.
    pub fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub(crate) fn accumulate_grad(&self, g: Buffer) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("kind", &self.0.kind)
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_extent() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(TensorError::Contract { .. })
        ));
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn no_grad_produces_constants() {
        let p = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| p.scale(2.0));
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
        assert!(p.scale(2.0).requires_grad());
    }
}
