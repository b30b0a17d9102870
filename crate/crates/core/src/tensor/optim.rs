//! Named parameter sets and the Adam optimizer.

use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Ordered map from dotted names to gradient-enabled tensors. Iteration is
/// lexicographic (BTreeMap), which is what makes init, checkpoints and the
/// optimizer deterministic.
#[derive(Default, Clone)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if !t.requires_grad() {
            return Err(Error::InvalidArgument(format!(
                "parameter '{name}' must require grad"
            )));
        }
        if self.map.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.map.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Replace a parameter's value, keeping its name and shape.
    pub fn replace_value(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let t = self.get(name)?;
        if t.len() != data.len() {
            return Err(Error::shape(
                "replace_value",
                format!("parameter '{name}' has {} values, got {}", t.len(), data.len()),
            ));
        }
        let shape = t.shape().to_vec();
        self.map.insert(name.into(), Tensor::new_grad(&shape, data)?);
        Ok(())
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.zero_grad();
        }
    }
}

/// First/second moment buffers plus hyperparameters for Adam.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update with bias correction. Gradients must have been populated
/// by `backward`; they are consumed (zeroed) by the step.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let names: Vec<String> = params.map.keys().cloned().collect();
    for name in names {
        let tensor = params.map.get(&name).unwrap();
        let grad = tensor
            .take_grad()
            .ok_or_else(|| Error::MissingGrad { param: name.clone() })?;
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        if m.len() != grad.len() {
            return Err(Error::shape(
                "adam_step",
                format!("moment buffer for '{name}' has stale shape"),
            ));
        }
        let mut data = tensor.data().to_vec();
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        params.replace_value(&name, data)?;
    }
    Ok(())
}
