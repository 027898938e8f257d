use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::AutodiffError;

type BackwardFn = dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>;

struct GradFn {
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

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Dense row-major `f64` array that participates in a reverse-mode graph.
///
/// Cloning is cheap and shares storage: a clone refers to the same graph node.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(node: Node) -> Self {
        Tensor { node: Rc::new(node) }
    }

    /// Constant leaf tensor. Panics if `data.len()` disagrees with `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        Self::try_new(shape, data).expect("tensor data length must equal product of shape")
    }

    pub fn try_new(shape: &[usize], data: Vec<f64>) -> Result<Self, AutodiffError> {
        if numel(shape) != data.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: false,
            grad_fn: None,
        }))
    }

    /// Trainable leaf tensor.
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length must equal product of shape"
        );
        Self::from_node(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: true,
            grad_fn: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[1], vec![value])
    }

    /// Builds the result of a differentiable operation.
    ///
    /// `backward` receives the gradient of the output and returns one entry per
    /// parent (`None` when that parent receives no gradient). When no parent
    /// requires a gradient, or inside [`no_grad`], the node is recorded as a
    /// constant.
    pub fn from_op<F>(shape: &[usize], data: Vec<f64>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        assert_eq!(numel(shape), data.len(), "op output length must equal product of shape");
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = track.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Self::from_node(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: track,
            grad_fn,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values. Intended for optimizer updates and
    /// finite-difference probing of leaves.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on a tensor with {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn set_grad(&self, grad: Option<Vec<f64>>) {
        *self.node.grad.borrow_mut() = grad;
    }

    /// Same storage identity.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    /// A constant copy, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec())
    }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<(), AutodiffError> {
        if self.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(Rc::as_ptr(&self.node), vec![1.0]);
        for t in order.iter().rev() {
            let key = Rc::as_ptr(&t.node);
            let Some(g) = pending.remove(&key) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.get_mut(&Rc::as_ptr(&p.node)) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(Rc::as_ptr(&p.node), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients; iterative to survive deep graphs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.node));
        while let Some((t, child)) = stack.pop() {
            let parents = t.node.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[]);
            if child < parents.len() {
                let p = parents[child].clone();
                stack.push((t, child + 1));
                if p.requires_grad() && seen.insert(Rc::as_ptr(&p.node)) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}
