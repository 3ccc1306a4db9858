//! The [`Tensor`] handle and the reverse sweep.
//!
//! Every operation on tensors that require gradients records its parents and
//! a closure computing the vector-Jacobian product. Calling
//! [`Tensor::backward`] on a scalar orders the recorded graph topologically
//! and visits each node once, after all of its consumers.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};

thread_local! {
    static RECORDING: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operation on this thread: results are
/// constants even when their inputs require gradients.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            RECORDING.with(|r| r.set(self.0));
        }
    }
    let _restore = Restore(RECORDING.with(|r| r.replace(false)));
    f()
}

/// Gradients for each parent of an operation, in parent order. `None` means
/// the parent receives no contribution.
pub type ParentGrads = Vec<Option<Vec<f64>>>;

type BackwardFn = dyn Fn(&[f64], &[Tensor]) -> ParentGrads;

struct GradFn {
    name: &'static str,
    parents: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Reference-counted handle to a node of the computation graph.
///
/// Cloning is cheap and shares the underlying storage.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::Contract(format!(
            "shape {shape:?} has a zero extent"
        )));
    }
    if numel(shape) != len {
        return Err(TensorError::Contract(format!(
            "shape {shape:?} holds {} values but {len} were given",
            numel(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn: None,
        })))
    }

    /// A constant: never receives a gradient.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape.to_vec(), false)
    }

    /// A trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape.to_vec(), true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; numel(shape)], shape).expect("zeros: valid shape")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(vec![value], &[]).expect("scalar shape")
    }

    /// Builds the result of a custom differentiable operation.
    ///
    /// `backward` receives the gradient of the output and the parents, and
    /// returns one optional gradient per parent. When no parent requires a
    /// gradient nothing is recorded.
    pub fn from_op<F>(
        name: &'static str,
        data: Vec<f64>,
        shape: &[usize],
        parents: Vec<Tensor>,
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&[f64], &[Tensor]) -> ParentGrads + 'static,
    {
        check_shape(shape, data.len())?;
        let requires_grad = RECORDING.with(Cell::get) && parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            name,
            parents,
            backward: Box::new(backward),
        });
        Ok(Tensor(Rc::new(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if any was recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    /// Overwrites the values in place. Used by optimizers and the gradient
    /// checker; graphs built earlier keep referring to the same storage.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if values.len() != data.len() {
            return Err(TensorError::shape("set_data", &self.0.shape, &[values.len()]));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A constant copy detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.to_vec(), self.0.shape.clone(), false).expect("same shape")
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse sweep from a scalar.
    ///
    /// Leaves accumulate into their stored gradient across calls; interior
    /// nodes have their gradient overwritten with this sweep's value.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else {
                continue;
            };
            if let Some(grad_fn) = &node.0.grad_fn {
                let parent_grads = (grad_fn.backward)(&grad, &grad_fn.parents);
                debug_assert_eq!(parent_grads.len(), grad_fn.parents.len());
                for (parent, pg) in grad_fn.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel(), "{}", grad_fn.name);
                    match pending.get_mut(&parent.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                        None => {
                            pending.insert(parent.key(), pg);
                        }
                    }
                }
                *node.0.grad.borrow_mut() = Some(grad);
            } else {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Post-order over the recorded graph: every node appears after all of
    /// its parents.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        // (node, index of next parent to expand)
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((node, next)) = stack.pop() {
            let parents = node.0.grad_fn.as_ref().map(|g| g.parents.as_slice());
            match parents.and_then(|p| p.get(next)) {
                Some(parent) => {
                    let parent = parent.clone();
                    stack.push((node, next + 1));
                    if parent.requires_grad() && visited.insert(parent.key()) {
                        stack.push((parent, 0));
                    }
                }
                None => order.push(node),
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}
