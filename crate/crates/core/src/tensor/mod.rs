//! Dense N-dimensional `f64` tensors with reverse-mode automatic
//! differentiation.
//!
//! The op set is deliberately minimal: exactly what the restoration network
//! and its losses need. Tensors are immutable once built; every operation
//! returns a fresh tensor and, when any input is gradient-tracked, records
//! how to push gradients back to its inputs. `backward` walks that record
//! graph in reverse topological order and accumulates gradients into the
//! leaf tensors that were created with `requires_grad`.
//!
//! Forward ops are pure functions: identical inputs give bitwise-identical
//! outputs, also when the convolution kernels parallelize internally
//! (each output element is produced by one thread with a fixed summation
//! order).

mod conv;
mod norm;
mod ops;
mod optim;

pub mod gradcheck;

pub use ops::concat_channels;
pub use optim::{adam_step, AdamState, ParamSet};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Gradient record: the inputs of an op plus the code that maps the output
/// gradient to per-input gradients. Slots for untracked inputs may be `None`.
pub(crate) struct OpRecord {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    #[allow(clippy::type_complexity)]
    pub backward: Box<dyn Fn(&[f64], &Tensor) -> Vec<Option<Vec<f64>>> + Send + Sync>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Explicitly marked leaf that should receive a persistent gradient.
    requires_grad: bool,
    /// True when this tensor is `requires_grad` or depends on one; only
    /// tracked tensors carry op records.
    tracked: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Option<OpRecord>,
}

/// Shared handle to an immutable tensor value.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

#[inline]
pub(crate) fn debug_check_finite(op: &'static str, data: &[f64]) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "non-finite value produced by `{op}`"
    );
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<OpRecord>) -> Self {
        let tracked = requires_grad
            || op
                .as_ref()
                .map(|r| r.inputs.iter().any(|t| t.tracked()))
                .unwrap_or(false);
        let op = if tracked { op } else { None };
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                tracked,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    /// New leaf tensor without gradient tracking.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// New leaf tensor that accumulates a gradient during `backward`.
    pub fn new_grad(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "tensor::new_grad",
                format!("shape {:?} needs {} values, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![v; n], false, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![1], vec![v], false, None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: OpRecord) -> Self {
        debug_check_finite(op.name, &data);
        Self::build(shape, data, false, Some(op))
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn tracked(&self) -> bool {
        self.inner.tracked
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f64 {
        assert_eq!(self.len(), 1, "value() requires a scalar tensor");
        self.inner.data[0]
    }

    /// Copy of the accumulated gradient, if `backward` populated one.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Detached copy: same values, no gradient history.
    pub fn detach(&self) -> Tensor {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// Reverse-mode gradient propagation from a scalar loss.
    ///
    /// Gradients accumulate into every reachable leaf created with
    /// `requires_grad`; repeated calls without `zero_grad`/`take_grad` add up.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got {} elements",
                self.len()
            )));
        }
        if !self.tracked() {
            return Err(Error::InvalidArgument(
                "backward: loss does not depend on any gradient-enabled tensor".into(),
            ));
        }

        // Pass 1: count consumers of every tracked node reachable from the loss.
        let mut nodes: HashMap<u64, Tensor> = HashMap::new();
        let mut pending: HashMap<u64, usize> = HashMap::new();
        let mut stack = vec![self.clone()];
        nodes.insert(self.id(), self.clone());
        while let Some(t) = stack.pop() {
            if let Some(rec) = &t.inner.op {
                for inp in rec.inputs.iter().filter(|i| i.tracked()) {
                    *pending.entry(inp.id()).or_insert(0) += 1;
                    if !nodes.contains_key(&inp.id()) {
                        nodes.insert(inp.id(), inp.clone());
                        stack.push(inp.clone());
                    }
                }
            }
        }

        // Pass 2: Kahn-style propagation; a node is processed once all of its
        // consumers have contributed to its gradient.
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        let mut ready = vec![self.clone()];
        while let Some(t) = ready.pop() {
            let g = grads
                .remove(&t.id())
                .expect("ready node must have a gradient");
            if t.requires_grad() {
                let mut slot = t.inner.grad.lock().unwrap();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            if let Some(rec) = &t.inner.op {
                let input_grads = (rec.backward)(&g, &t);
                debug_assert_eq!(input_grads.len(), rec.inputs.len());
                for (inp, ig) in rec.inputs.iter().zip(input_grads) {
                    if !inp.tracked() {
                        continue;
                    }
                    let ig = ig.unwrap_or_else(|| {
                        panic!("op `{}` returned no gradient for a tracked input", rec.name)
                    });
                    match grads.get_mut(&inp.id()) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&ig) {
                                *a += b;
                            }
                        }
                        None => {
                            grads.insert(inp.id(), ig);
                        }
                    }
                    let p = pending.get_mut(&inp.id()).expect("counted node");
                    *p -= 1;
                    if *p == 0 {
                        ready.push(inp.clone());
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_grad_is_ones() {
        let x = Tensor::new_grad(&[4], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn half_square_grad_is_x() {
        let x = Tensor::new_grad(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap().scale(0.5).unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert!((gi - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_accumulates_without_reset() {
        let x = Tensor::new_grad(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::new_grad(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // loss = sum(x*x + x) => grad = 2x + 1
        let x = Tensor::new_grad(&[3], vec![1.0, 2.0, -3.0]).unwrap();
        let loss = x.mul(&x).unwrap().add(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert!((gi - (2.0 * xi + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn detach_blocks_gradients() {
        let x = Tensor::new_grad(&[2], vec![1.0, 2.0]).unwrap();
        let d = x.mul(&x).unwrap().detach();
        assert!(!d.tracked());
        let loss = d.sum().unwrap();
        assert!(loss.backward().is_err());
    }

    #[test]
    fn forward_is_pure_and_deterministic() {
        let x = Tensor::new(&[2, 3, 8, 8], (0..384).map(|i| (i as f64) * 0.013 - 1.0).collect()).unwrap();
        let a = x.sigmoid().unwrap();
        let b = x.sigmoid().unwrap();
        assert_eq!(a.data(), b.data());
    }
}
