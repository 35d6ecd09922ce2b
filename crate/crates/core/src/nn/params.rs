use crate::error::{Error, Result};
use crate::nn::model::ModelConfig;
use crate::nn::tensor::Tensor;

/// One named parameter with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Member of the severity-head subset used for per-class gradient norms.
    pub head: bool,
}

/// Ordered parameter collection of one model.
///
/// Every mutable access to parameter values bumps `version`, which tapes use
/// to detect that they were recorded against older weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    config: ModelConfig,
    params: Vec<Param>,
    version: u64,
}

impl ParamStore {
    pub(crate) fn new(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate parameter name {}", p.name)));
            }
        }
        Ok(Self {
            config,
            params,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub(crate) fn value(&self, idx: usize) -> &[f64] {
        self.params[idx].value.data()
    }

    /// Mutable access to a parameter value. Invalidates existing tapes.
    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        self.version += 1;
        &mut self.params[idx].value
    }

    pub fn grad(&self, idx: usize) -> &[f64] {
        self.params[idx].grad.data()
    }

    #[cfg(test)]
    pub(crate) fn grad_mut(&mut self, idx: usize) -> &mut [f64] {
        self.params[idx].grad.data_mut()
    }

    /// Simultaneous access to values and gradients, used by optimizers.
    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &Tensor)> {
        self.version += 1;
        self.params.iter_mut().map(|p| (&mut p.value, &p.grad))
    }

    /// `params[..mid]` and `params[mid..]`, for disjoint gradient borrows.
    /// Callers must only touch `grad` through these.
    pub(crate) fn grads_split_mut(&mut self, mid: usize) -> (&mut [Param], &mut [Param]) {
        self.params.split_at_mut(mid)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Indices of the severity-head parameters, in store order.
    pub fn head_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].head).collect()
    }

    /// All gradients concatenated in store order.
    pub fn flat_grad(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}
