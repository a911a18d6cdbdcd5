//! Reference-counted `f32` tensors with a recorded backward graph.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to a row-major buffer. Operations
//! whose inputs require gradients record a node holding the input handles and
//! a [`BackwardOp`]; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates into the `grad` buffers of leaf tensors
//! created with [`Tensor::param`]. Intermediate tensors do not keep gradients.
//!
//! Gradients accumulate across repeated `backward` calls until
//! [`Tensor::zero_grad`] is called, matching the usual training-loop contract.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// RAII guard returned by [`no_grad`]; restores the previous state on drop.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Disables graph recording on the current thread while the guard lives.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Vector-Jacobian product for one recorded operation.
///
/// `backward` receives the gradient of the loss w.r.t. the op output and the
/// op inputs in recording order, and returns one entry per input (`None` for
/// inputs that do not require gradients).
pub trait BackwardOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, grad_output: &[f32], inputs: &[Tensor]) -> Result<Vec<Option<Vec<f32>>>>;
}

struct Node {
    inputs: Vec<Tensor>,
    op: Box<dyn BackwardOp>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<Node>) -> Tensor {
        let grad = (requires_grad && node.is_none()).then(|| vec![0.0; data.len()]);
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad,
                grad: Mutex::new(grad),
                node,
            }),
        }
    }

    /// A constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf whose gradient buffer starts at zero.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel_of(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; numel_of(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::build(vec![1], vec![value], false, None)
    }

    /// Result of an operation. Records a graph node when any input requires
    /// gradients and recording is enabled on this thread.
    pub fn from_op(
        shape: Vec<usize>,
        data: Vec<f32>,
        inputs: &[&Tensor],
        op: impl BackwardOp + 'static,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let node = Node {
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                op: Box::new(op),
            };
            Tensor::build(shape, data, true, Some(node))
        } else {
            Tensor::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(Error::Shape(format!("expected a rank-4 NCHW tensor, got {s:?}"))),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f32>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access to the values. Used for optimizer steps, BN running
    /// statistics and weight import; never changes the shape.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f32>> {
        self.inner.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    pub fn item(&self) -> f32 {
        self.data()[0]
    }

    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut d = self.data_mut();
        if d.len() != values.len() {
            return Err(Error::Shape(format!(
                "set_data: expected {} values, got {}",
                d.len(),
                values.len()
            )));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    /// A constant copy sharing nothing with the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// Accumulated gradient of a leaf, if it tracks one.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[f32]>) -> R) -> R {
        let g = self.inner.grad.lock().expect("grad lock poisoned");
        f(g.as_deref())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.inner.grad.lock().expect("grad lock poisoned").as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn accumulate_grad(&self, delta: &[f32]) {
        if let Some(g) = self.inner.grad.lock().expect("grad lock poisoned").as_mut() {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += *b;
            }
        }
    }

    /// Backpropagates from this scalar into every reachable leaf that
    /// requires gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        if self.is_leaf() {
            self.accumulate_grad(&[1.0]);
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(grad_out) = pending.remove(&t.id()) else {
                continue;
            };
            let Some(node) = t.inner.node.as_ref() else {
                t.accumulate_grad(&grad_out);
                continue;
            };
            let grads = node.op.backward(&grad_out, &node.inputs)?;
            debug_assert_eq!(grads.len(), node.inputs.len(), "{}", node.op.name());
            for (input, g) in node.inputs.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel(), "{} grad length", node.op.name());
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => {
                        pending.insert(input.id(), g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through tracked edges, inputs before users.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Iterative DFS: (tensor, children already pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.inner.node.as_ref() {
                for input in &node.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
    }
    if numel_of(shape) != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {} values, got {len}",
            numel_of(shape)
        )));
    }
    Ok(())
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.inner.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}
