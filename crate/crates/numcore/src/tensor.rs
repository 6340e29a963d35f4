//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! Every operator builds a node in an acyclic graph; [`Tensor::backward`]
//! replays the graph in reverse topological order and accumulates gradients
//! into every `requires_grad` ancestor. Repeated backward calls without a
//! [`Tensor::zero_grad`] in between accumulate, which is occasionally useful
//! for gradient sums over micro-batches.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Result, TensorError};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True when newly created ops record the autodiff graph.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Run `f` with graph recording disabled (forward-only evaluation).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

/// Gradient callback: receives the output gradient and the parent tensors,
/// and accumulates into each parent via [`Tensor::accumulate_grad`].
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense row-major array of `f64` participating in reverse-mode autodiff.
///
/// Cloning a `Tensor` is cheap: it clones the handle, not the storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    // ── construction ─────────────────────────────────────────────────

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength {
                expected: numel,
                got: data.len(),
            });
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::leaf(vec![1], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![1.0; numel], false)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![v; numel], false)
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.requires_grad(true))
    }

    /// Return a handle to the same storage with `requires_grad` toggled.
    /// Only meaningful on leaves; graph nodes keep their computed flag.
    pub fn requires_grad(&self, flag: bool) -> Tensor {
        if self.inner.backward.is_some() {
            return self.clone();
        }
        Tensor {
            inner: Rc::new(Inner {
                id: self.inner.id,
                shape: self.inner.shape.clone(),
                data: RefCell::new(self.inner.data.borrow().clone()),
                grad: RefCell::new(None),
                requires_grad: flag,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub(crate) fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Graph-node constructor used by every operator. Skips graph recording
    /// when no parent needs gradients or recording is disabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = grad_enabled() && parents.iter().any(|p| p.inner.requires_grad);
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: track,
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
            }),
        }
    }

    /// Copy of the data as a fresh leaf that does not require gradients.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.inner.shape.clone(), self.to_vec(), false)
    }

    // ── accessors ────────────────────────────────────────────────────

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the storage. Meant for leaves (optimizer updates,
    /// running statistics); mutating graph nodes invalidates saved values.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    // ── backward engine ──────────────────────────────────────────────

    /// Reverse-mode accumulation from a scalar root. Gradients add into any
    /// existing values; call [`zero_grad`](Tensor::zero_grad) between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                numel: self.numel(),
            });
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            if let Some(backward) = node.inner.backward.as_ref() {
                let grad = node.inner.grad.borrow();
                if let Some(g) = grad.as_ref() {
                    backward(g, &node.inner.parents);
                }
            }
        }
        // Interior grads are scratch space; keep leaves only.
        for node in order.iter() {
            if node.inner.backward.is_some() {
                *node.inner.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }

    /// Iterative post-order DFS over the graph (children before parents is
    /// reversed by the caller), deduplicated by node id.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        // (node, child_cursor)
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.inner.id);
        while let Some((node, cursor)) = stack.pop() {
            if cursor < node.inner.parents.len() {
                let child = node.inner.parents[cursor].clone();
                stack.push((node, cursor + 1));
                if child.inner.requires_grad && seen.insert(child.inner.id) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(
            err,
            TensorError::DataLength {
                expected: 6,
                got: 5
            }
        );
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            x.backward(),
            Err(TensorError::NonScalarRoot { numel: 2 })
        ));
    }

    #[test]
    fn product_rule() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let y = Tensor::param(&[1], vec![3.0]).unwrap();
        let z = x.mul(&y).unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
        assert_eq!(y.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0]); // 2 * dy/dx
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad_flag());
    }

    #[test]
    fn diamond_reuse_accumulates_through_shared_node() {
        // z = (x*x) + (x*x) reuses the same intermediate handle twice.
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let sq = x.mul(&x).unwrap();
        let z = sq.add(&sq).unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]); // d/dx 2x^2
    }
}
