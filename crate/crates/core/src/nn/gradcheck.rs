//! Central-difference verification of the analytic gradients of the full
//! training objective.
//!
//! Each entry is differentiated numerically with steps `h` and `h/2`, and the
//! two central differences are Richardson-combined to cancel the `O(h²)`
//! truncation term. Steps that flip a ReLU or max-pool decision are shrunk.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{self, LossKind, LossVariant};
use crate::nn::model::{backward_total, forward, init_model, ForwardTape, ModelConfig, TapeLoss};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::reweight::{self, AlphaWeights, NORM_FLOOR};
use crate::rng;

/// Largest step shrink applied when a perturbation crosses a ReLU or
/// max-pool switch.
const MAX_SHRINKS: usize = 4;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

const BATCH: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
    /// Entries for which no step kept the activation pattern fixed.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn variant_for(kind: LossKind) -> LossVariant {
    match kind {
        LossKind::Ce => LossVariant::Ce,
        LossKind::WeightedCe => LossVariant::WeightedCe {
            weights: losses::weighted_ce_weights(&[3, 2, 1]).expect("non-empty counts"),
        },
        LossKind::Focal => LossVariant::Focal {
            gamma: losses::DEFAULT_FOCAL_GAMMA,
        },
        LossKind::Ordinal => LossVariant::Ordinal,
    }
}

/// Objective with class weights frozen at the values computed on the
/// unperturbed parameters.
struct Objective<'a> {
    variant: &'a LossVariant,
    severity: &'a [usize],
    axis: &'a [usize],
    alphas: Option<AlphaWeights>,
}

impl Objective<'_> {
    fn evaluate(&self, tape: &ForwardTape) -> Result<TapeLoss> {
        let terms = losses::severity_terms(self.variant, tape.severity_logits(), self.severity)?;
        let (axis_value, axis_grad) = losses::axis_loss_terms(tape.axis_logits(), self.axis)?;
        let (cls, sev_grad) = match &self.alphas {
            Some(alphas) => {
                let classes = losses::per_class_terms(&terms, self.severity, false)?;
                let bundle = reweight::combine_losses(&classes, alphas, axis_value)?;
                (bundle.cls, bundle.severity_grad()?)
            }
            None => losses::batch_objective(self.variant, &terms, self.severity),
        };
        TapeLoss::new(tape, cls + axis_value, sev_grad, axis_grad)
    }
}

fn perturbed_value(
    params: &mut ParamStore,
    objective: &Objective,
    batch: &Tensor,
    pattern: &[u64],
    p: usize,
    j: usize,
    delta: f64,
) -> Result<Option<f64>> {
    let original = params.params()[p].value.data()[j];
    params.value_mut(p).data_mut()[j] = original + delta;
    let tape = forward(params, batch)?;
    let stable = tape.activation_pattern() == pattern;
    let value = objective.evaluate(&tape)?.value;
    params.value_mut(p).data_mut()[j] = original;
    Ok(stable.then_some(value))
}

/// `(f(θ+h) - f(θ-h)) / 2h`, or `None` if either side leaves the smooth
/// piece the unperturbed point lies on.
#[allow(clippy::too_many_arguments)]
fn central_difference(
    params: &mut ParamStore,
    objective: &Objective,
    batch: &Tensor,
    pattern: &[u64],
    p: usize,
    j: usize,
    h: f64,
) -> Result<Option<f64>> {
    let plus = perturbed_value(params, objective, batch, pattern, p, j, h)?;
    let minus = perturbed_value(params, objective, batch, pattern, p, j, -h)?;
    Ok(plus.zip(minus).map(|(fp, fm)| (fp - fm) / (2.0 * h)))
}

fn check_store(params: &mut ParamStore, objective: &Objective, batch: &Tensor, eps: f64) -> Result<GradCheckReport> {
    params.zero_grad();
    let tape = forward(params, batch)?;
    let pattern = tape.activation_pattern();
    let loss = objective.evaluate(&tape)?;
    backward_total(&tape, params, &loss, 1.0)?;
    let analytic: Vec<Vec<f64>> = (0..params.len()).map(|p| params.grad(p).to_vec()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
        skipped: 0,
    };
    for (p, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let mut h = eps;
            let mut numeric = None;
            for _ in 0..=MAX_SHRINKS {
                let wide = central_difference(params, objective, batch, &pattern, p, j, h)?;
                let narrow = central_difference(params, objective, batch, &pattern, p, j, h / 2.0)?;
                if let (Some(wide), Some(narrow)) = (wide, narrow) {
                    numeric = Some((4.0 * narrow - wide) / 3.0);
                    break;
                }
                h /= 10.0;
            }
            match numeric {
                Some(n) => {
                    report.checked += 1;
                    let err = relative_error(a, n);
                    if err > report.max_rel_error || err.is_nan() {
                        report.max_rel_error = err;
                        report.worst = (params.params()[p].name.clone(), j);
                    }
                }
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

/// Builds a small model and batch from `seed` and compares analytic
/// gradients of the total loss against central differences with step `eps`
/// for every parameter, with and without class reweighting. Returns the
/// worst relative error found.
pub fn finite_diff_check(config: &ModelConfig, loss: LossKind, seed: u64, eps: f64) -> Result<GradCheckReport> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::Argument(format!("step {eps} outside [1e-5, 1e-2]")));
    }
    let config = ModelConfig {
        seed,
        ordinal_head: loss == LossKind::Ordinal,
        ..config.clone()
    };
    let mut params = init_model(&config)?;
    let mut stream = rng::stream(seed, "gradcheck", &[]);
    // zero biases put dead units exactly on their ReLU kink
    for p in 0..params.len() {
        if params.params()[p].name.ends_with(".bias") {
            for v in params.value_mut(p).data_mut() {
                *v = stream.random_range(-0.1..0.1);
            }
        }
    }
    let plane = config.height * config.width;
    let images: Vec<f64> = (0..BATCH * plane).map(|_| stream.random_range(-1.0..1.0)).collect();
    let batch = Tensor::new(vec![BATCH, 1, config.height, config.width], images)?;
    let mut severity: Vec<usize> = (0..BATCH).map(|i| i % 3).collect();
    severity.shuffle(&mut stream);
    let axis: Vec<usize> = (0..BATCH).map(|_| stream.random_range(0..3)).collect();
    let variant = variant_for(loss);

    let plain = Objective {
        variant: &variant,
        severity: &severity,
        axis: &axis,
        alphas: None,
    };
    let mut report = check_store(&mut params, &plain, &batch, eps)?;

    let tape = forward(&params, &batch)?;
    let terms = losses::severity_terms(&variant, tape.severity_logits(), &severity)?;
    let classes = losses::per_class_terms(&terms, &severity, false)?;
    let norms = reweight::class_grad_norms(&tape, &classes, &params)?;
    let weighted = Objective {
        alphas: Some(reweight::compute_alpha(&norms, NORM_FLOOR)?),
        ..plain
    };
    let second = check_store(&mut params, &weighted, &batch, eps)?;
    report.checked += second.checked;
    report.skipped += second.skipped;
    if second.max_rel_error > report.max_rel_error {
        report.max_rel_error = second.max_rel_error;
        report.worst = second.worst;
    }
    Ok(report)
}
