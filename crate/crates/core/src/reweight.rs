//! Per-class gradient-norm loss reweighting.
//!
//! For every class present in a batch, the norm of the gradient its mean
//! loss induces on the severity head is measured. Classes are then weighted
//! by `min_norm / norm`, so the class with the smallest head gradient keeps
//! weight one and louder classes are damped to the same update magnitude.
//! Weights are treated as constants when differentiating the total loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ClassLoss, NUM_CLASSES};
use crate::nn::{head_grad, ForwardTape, ParamStore, TapeLoss};

/// Clamp applied to gradient norms before taking ratios.
pub const NORM_FLOOR: f64 = 1e-12;

/// Gradient norm per class; `None` for classes absent from the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNorms(pub [Option<f64>; NUM_CLASSES]);

/// Class weight per class; `None` for classes absent from the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaWeights(pub [Option<f64>; NUM_CLASSES]);

impl AlphaWeights {
    /// All classes present with weight one.
    pub fn uniform() -> Self {
        Self([Some(1.0); NUM_CLASSES])
    }

    pub fn get(&self, c: usize) -> Option<f64> {
        self.0[c]
    }
}

/// Loss values of one batch after reweighting.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub class_losses: ClassLoss,
    pub alphas: AlphaWeights,
    pub axis: f64,
    pub cls: f64,
    pub total: f64,
}

impl LossBundle {
    /// Gradient of the weighted classification loss with respect to the
    /// severity logits, weights held constant.
    pub fn severity_grad(&self) -> Result<Vec<f64>> {
        let grads = self
            .class_losses
            .logit_grads
            .as_ref()
            .ok_or_else(|| Error::Contract("class losses carry no logit gradients".into()))?;
        let mut out = vec![0.0; grads[0].len()];
        for c in self.class_losses.present_classes() {
            let alpha = self.alphas.0[c].expect("flags checked in combine_losses");
            for (o, g) in out.iter_mut().zip(&grads[c]) {
                *o += alpha * g;
            }
        }
        Ok(out)
    }
}

/// The loss of class `c` as a loss on `tape`, for head-gradient queries.
pub fn class_tape_loss(tape: &ForwardTape, class_losses: &ClassLoss, c: usize) -> Result<TapeLoss> {
    let grads = class_losses.logit_grads.as_ref().ok_or(Error::InvalidHandle)?;
    TapeLoss::severity_only(tape, class_losses.loss[c], grads[c].clone())
}

/// ℓ2 norm of each present class's severity-head gradient.
pub fn class_grad_norms(tape: &ForwardTape, class_losses: &ClassLoss, params: &ParamStore) -> Result<GradNorms> {
    let mut norms = [None; NUM_CLASSES];
    for c in class_losses.present_classes() {
        let loss = class_tape_loss(tape, class_losses, c)?;
        let g = head_grad(tape, &loss, params)?;
        norms[c] = Some(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(GradNorms(norms))
}

/// `α_c = min_c' max(φ_c', ε) / max(φ_c, ε)` over the present classes.
pub fn compute_alpha(norms: &GradNorms, eps: f64) -> Result<AlphaWeights> {
    let clamped = norms.0.map(|n| n.map(|v| v.max(eps)));
    let min = clamped
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or_else(|| Error::Contract("no class present".into()))?;
    Ok(AlphaWeights(clamped.map(|n| n.map(|v| if v == min { 1.0 } else { min / v }))))
}

/// `L_cls = Σ_c α_c · L^(c)` over present classes, `L_total = L_cls + L_axis`.
pub fn combine_losses(class_losses: &ClassLoss, alphas: &AlphaWeights, axis_loss: f64) -> Result<LossBundle> {
    for c in 0..NUM_CLASSES {
        if class_losses.present(c) != alphas.0[c].is_some() {
            return Err(Error::Contract(format!(
                "class {c} presence differs between losses and weights"
            )));
        }
    }
    let cls: f64 = class_losses
        .present_classes()
        .map(|c| alphas.0[c].unwrap() * class_losses.loss[c])
        .sum();
    Ok(LossBundle {
        class_losses: class_losses.clone(),
        alphas: *alphas,
        axis: axis_loss,
        cls,
        total: cls + axis_loss,
    })
}
