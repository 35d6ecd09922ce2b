use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients currently in `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64, config: AdamConfig) -> Result<()> {
    if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.params())
            .any(|(m, p)| m.len() != p.value.len())
    {
        return Err(Error::Config("optimizer state does not match parameter shapes".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - config.beta1.powf(t);
    let c2 = 1.0 - config.beta2.powf(t);
    for ((value, grad), (m, v)) in params
        .values_and_grads_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * g;
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Argument(format!(
            "cosine schedule step {step} outside 0..={total_steps}"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{init_model, ModelConfig};

    fn store() -> ParamStore {
        init_model(&ModelConfig::tiny(0)).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = store();
        let mut state = AdamState::new(&params);
        let before = params.params()[0].value.data()[0];
        params.grad_mut(0)[0] = 1.0;
        params.grad_mut(0)[1] = -1.0;
        let before1 = params.params()[0].value.data()[1];
        adam_step(&mut params, &mut state, 0.1, AdamConfig::default()).unwrap();
        let delta = params.params()[0].value.data()[0] - before;
        let delta1 = params.params()[0].value.data()[1] - before1;
        assert!((delta + 0.1).abs() < 1e-6);
        assert!((delta + delta1).abs() < 1e-15);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_but_advances_step() {
        let mut params = store();
        let mut state = AdamState::new(&params);
        let before = params.flat_values();
        adam_step(&mut params, &mut state, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(params.flat_values(), before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut params = store();
        let mut state = AdamState::new(&init_model(&ModelConfig::default()).unwrap());
        assert!(matches!(
            adam_step(&mut params, &mut state, 0.1, AdamConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 1e-3, 1e-5).unwrap(), 1e-3);
        assert!((cosine_lr(10, 10, 1e-3, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 1e-3, 1e-5).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(cosine_lr(11, 10, 1e-3, 1e-5).is_err());
        assert!(cosine_lr(0, 0, 1e-3, 1e-5).is_err());
    }
}
