use std::collections::BTreeMap;

use rand::Rng;

use super::graph::{Gradients, Graph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Slot {
    value: Tensor,
    grad: Option<Vec<f64>>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Slot {
    fn new(value: Tensor) -> Self {
        let n = value.numel();
        Self { value, grad: None, first_moment: vec![0.0; n], second_moment: vec![0.0; n] }
    }
}

/// Named trainable tensors plus their gradient accumulators and AdamW moments.
///
/// Iteration order is the lexicographic order of names, which keeps
/// checkpoints and optimizer updates deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Linear warmup from 0 to `base` over `warmup_steps`, constant afterwards.
/// `step` counts optimizer steps starting at 1.
pub fn warmup_lr(base: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base
    } else {
        base * step as f64 / warmup_steps as f64
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.slots.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.slots.insert(name.to_string(), Slot::new(value));
        Ok(())
    }

    /// Uniform in `±sqrt(1 / fan_in)`.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        dims: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(dims, |_| rng.random_range(-bound..bound));
        self.insert(name, t)
    }

    pub fn insert_zeros(&mut self, name: &str, dims: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(dims))
    }

    pub fn insert_full(&mut self, name: &str, dims: &[usize], value: f64) -> Result<()> {
        self.insert(name, Tensor::full(dims, value))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots.get(name).map(|s| &s.value).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.slots.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.value.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` is {:?}, got {:?}",
                slot.value.dims(),
                value.dims()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.slots.get(name).and_then(|s| s.grad.as_deref())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }

    pub fn optimizer_step_count(&self) -> u64 {
        self.step
    }

    /// Sets every gradient accumulator to zeros.
    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            match &mut slot.grad {
                Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
                None => slot.grad = Some(vec![0.0; slot.value.numel()]),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad = None;
        }
    }

    /// Adds `scale *` the gradients of every parameter leaf in `graph`.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients, scale: f64) -> Result<()> {
        for (name, var) in graph.param_vars() {
            let Some(g) = grads.get(var) else { continue };
            let slot = self.slots.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            let buf = slot.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            buf.iter_mut().zip(g).for_each(|(d, s)| *d += scale * s);
        }
        Ok(())
    }

    /// Decoupled-weight-decay Adam update. Every parameter must carry a
    /// gradient; gradients are cleared afterwards.
    pub fn adamw_step(&mut self, opt: &AdamW) -> Result<()> {
        if let Some((name, _)) = self.slots.iter().find(|(_, s)| s.grad.is_none()) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for slot in self.slots.values_mut() {
            let grad = slot.grad.take().expect("checked above");
            let data = slot.value.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                let m = opt.beta1 * slot.first_moment[i] + (1.0 - opt.beta1) * g;
                let v = opt.beta2 * slot.second_moment[i] + (1.0 - opt.beta2) * g * g;
                slot.first_moment[i] = m;
                slot.second_moment[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                data[i] -= opt.lr * opt.weight_decay * data[i];
                data[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
        Ok(())
    }

    /// Copy with every value rounded through `f32` and fresh optimizer state.
    pub fn rounded_to_f32(&self) -> ParameterStore {
        let slots = self
            .slots
            .iter()
            .map(|(k, s)| (k.clone(), Slot::new(s.value.round_to_f32())))
            .collect();
        ParameterStore { slots, step: 0 }
    }
}
