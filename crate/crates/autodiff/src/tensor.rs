use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};
use crate::scalar::Real;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording a differentiation graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Inputs handed to an operation's backward rule.
pub(crate) struct BackwardCtx<'a, F: Real> {
    pub grad: &'a [F],
    pub out: &'a [F],
    pub parents: &'a [Tensor<F>],
}

type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>> + Send + Sync>;

struct Node<F: Real> {
    op: &'static str,
    parents: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

struct Inner<F: Real> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<F>>>,
    node: Option<Node<F>>,
}

/// Dense row-major tensor. Cloning is cheap and shares the buffer.
///
/// Values never change after construction; only leaf gradient buffers do.
pub struct Tensor<F: Real> {
    inner: Arc<Inner<F>>,
}

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor { inner: Arc::clone(&self.inner) }
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape);
        if let Some(node) = &self.inner.node {
            s.field("op", &node.op);
        }
        if self.inner.data.len() <= 16 {
            s.field("data", &self.inner.data);
        }
        s.finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::invalid("tensor", format!("zero extent in shape {shape:?}")));
    }
    if numel(shape) != len {
        return Err(TensorError::invalid(
            "tensor",
            format!("shape {shape:?} holds {} values, got {len}", numel(shape)),
        ));
    }
    Ok(())
}

impl<F: Real> Tensor<F> {
    fn build(shape: Vec<usize>, data: Vec<F>, requires_grad: bool, node: Option<Node<F>>) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    /// Constant leaf.
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf whose gradient is accumulated by [`Tensor::backward`].
    pub fn leaf(shape: &[usize], data: Vec<F>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    /// Rank-0 constant.
    pub fn scalar(v: F) -> Self {
        Self::build(Vec::new(), vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![F::zero(); numel(shape)])
    }

    pub fn full(shape: &[usize], v: F) -> Result<Self> {
        Self::new(shape, vec![v; numel(shape)])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::lit(v)).collect())
    }

    /// Result of a differentiable operation. A graph node is recorded only when
    /// some parent needs a gradient and recording is enabled on this thread.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        backward: impl Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then(|| Node { op, parents, backward: Box::new(backward) });
        Self::build(shape, data, track, node)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.inner.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn accumulate_external(&self, g: &[F]) {
        self.accumulate_grad(g);
    }

    fn accumulate_grad(&self, g: &[F]) {
        let mut slot = self.inner.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients are added to whatever the
    /// trainable leaves already hold.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 || self.rank() > 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<F>> = HashMap::new();
        pending.insert(self.id(), vec![F::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else { continue };
            let Some(node) = &t.inner.node else {
                t.accumulate_grad(&g);
                continue;
            };
            let ctx = BackwardCtx { grad: &g, out: t.data(), parents: &node.parents };
            let parent_grads = (node.backward)(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel(), "{} grad length", node.op);
                match pending.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Tensors reachable through gradient-requiring edges, parents first.
    fn topo_order(&self) -> Vec<Tensor<F>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (tensor, children already pushed)
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
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl<F: Real> Drop for Inner<F> {
    fn drop(&mut self) {
        // Unlink long parent chains iteratively so deep graphs cannot overflow
        // the stack through recursive Arc drops.
        let Some(node) = self.node.take() else { return };
        let mut stack = node.parents;
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.inner) {
                if let Some(n) = inner.node.take() {
                    stack.extend(n.parents);
                }
            }
        }
    }
}
