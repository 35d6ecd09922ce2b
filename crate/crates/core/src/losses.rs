//! Severity and axis losses.
//!
//! Every loss is produced per sample together with its gradient with respect
//! to that sample's logit row, so that batch objectives, per-class means and
//! weighted sums can all be formed as linear combinations of rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Severity loss family as named in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    WeightedCe,
    Focal,
    Ordinal,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::WeightedCe => "weighted_ce",
            LossKind::Focal => "focal",
            LossKind::Ordinal => "ordinal",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "weighted_ce" => Ok(LossKind::WeightedCe),
            "focal" => Ok(LossKind::Focal),
            "ordinal" => Ok(LossKind::Ordinal),
            other => Err(Error::Argument(format!("unknown loss variant {other:?}"))),
        }
    }
}

pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

/// Fully parameterized severity loss.
#[derive(Debug, Clone, PartialEq)]
pub enum LossVariant {
    Ce,
    WeightedCe { weights: Vec<f64> },
    Focal { gamma: f64 },
    Ordinal,
}

impl LossVariant {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossVariant::Focal { gamma } if !(gamma.is_finite() && *gamma >= 0.0) => {
                Err(Error::Argument(format!("focal gamma must be >= 0, got {gamma}")))
            }
            LossVariant::WeightedCe { weights } if weights.iter().any(|w| !w.is_finite() || *w < 0.0) => {
                Err(Error::Argument(format!("class weights must be finite and non-negative: {weights:?}")))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossVariant::Ce => LossKind::Ce,
            LossVariant::WeightedCe { .. } => LossKind::WeightedCe,
            LossVariant::Focal { .. } => LossKind::Focal,
            LossVariant::Ordinal => LossKind::Ordinal,
        }
    }
}

/// Per-sample losses and their logit-row gradients (`B x W`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLosses {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub width: usize,
}

impl SampleLosses {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value and logit gradient of `Σ_i coef[i] · loss_i`.
    pub fn combine(&self, coef: &[f64]) -> (f64, Vec<f64>) {
        let value = self.values.iter().zip(coef).map(|(v, c)| v * c).sum();
        let mut grad = vec![0.0; self.grads.len()];
        for (i, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (g, &s) in grad[i * self.width..][..self.width]
                .iter_mut()
                .zip(&self.grads[i * self.width..][..self.width])
            {
                *g += c * s;
            }
        }
        (value, grad)
    }

    fn scale_rows(&mut self, coef: impl Fn(usize) -> f64) {
        for i in 0..self.values.len() {
            let c = coef(i);
            self.values[i] *= c;
            self.grads[i * self.width..][..self.width].iter_mut().for_each(|g| *g *= c);
        }
    }
}

fn check_logits(logits: &Tensor, targets: &[usize], classes: usize) -> Result<(usize, usize)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::Contract(format!(
            "logits shape {shape:?} does not match {} targets",
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&label) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Label { label, classes });
    }
    if !logits.is_finite() {
        return Err(Error::NumericFault { layer: "loss".into() });
    }
    Ok((shape[0], shape[1]))
}

/// `log softmax(row)[target]`, and `1 - p_target` computed as the sum of the
/// other probabilities so that it stays accurate near saturation.
fn log_prob_and_complement(row: &[f64], target: usize) -> (f64, f64, Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_p = row[target] - max - sum.ln();
    let others: f64 = exps.iter().enumerate().filter(|&(j, _)| j != target).map(|(_, e)| e).sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (log_p, others / sum, probs)
}

pub fn softmax_ce_terms(logits: &Tensor, targets: &[usize]) -> Result<SampleLosses> {
    let (b, k) = check_logits(logits, targets, logits.shape().get(1).copied().unwrap_or(0))?;
    let mut values = Vec::with_capacity(b);
    let mut grads = Vec::with_capacity(b * k);
    for (i, &t) in targets.iter().enumerate() {
        let (log_p, _, probs) = log_prob_and_complement(logits.row(i), t);
        values.push(-log_p);
        grads.extend(probs.iter().enumerate().map(|(j, p)| p - f64::from(u8::from(j == t))));
    }
    Ok(SampleLosses { values, grads, width: k })
}

/// Per-sample softmax cross-entropy.
pub fn softmax_ce(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    Ok(softmax_ce_terms(logits, targets)?.values)
}

/// Inverse-frequency class weights `N / (K · n_c)`; empty classes get 0.
pub fn weighted_ce_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return Err(Error::Argument("all class counts are zero".into()));
    }
    let k = class_counts.len() as f64;
    Ok(class_counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { total as f64 / (k * n as f64) })
        .collect())
}

pub fn weighted_ce_terms(logits: &Tensor, targets: &[usize], weights: &[f64]) -> Result<SampleLosses> {
    let mut terms = softmax_ce_terms(logits, targets)?;
    if weights.len() != terms.width {
        return Err(Error::Contract(format!(
            "{} class weights for {} classes",
            weights.len(),
            terms.width
        )));
    }
    terms.scale_rows(|i| weights[targets[i]]);
    Ok(terms)
}

pub fn focal_terms(logits: &Tensor, targets: &[usize], gamma: f64) -> Result<SampleLosses> {
    LossVariant::Focal { gamma }.validate()?;
    let (b, k) = check_logits(logits, targets, logits.shape().get(1).copied().unwrap_or(0))?;
    let mut values = Vec::with_capacity(b);
    let mut grads = Vec::with_capacity(b * k);
    for (i, &t) in targets.iter().enumerate() {
        let (log_p, q, probs) = log_prob_and_complement(logits.row(i), t);
        let p = probs[t];
        let modulator = q.powf(gamma);
        values.push(-modulator * log_p);
        // dℓ/dp_t · p_t, then dp_t/dz_j = p_t (δ_jt - p_j)
        let curvature = if gamma == 0.0 || q == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p * log_p
        };
        let coef = curvature - modulator;
        grads.extend(
            probs
                .iter()
                .enumerate()
                .map(|(j, pj)| coef * (f64::from(u8::from(j == t)) - pj)),
        );
    }
    Ok(SampleLosses { values, grads, width: k })
}

/// Per-sample focal loss `-(1 - p_t)^γ · ln p_t`.
pub fn focal_loss(logits: &Tensor, targets: &[usize], gamma: f64) -> Result<Vec<f64>> {
    Ok(focal_terms(logits, targets, gamma)?.values)
}

/// Numerically stable `BCE(σ(z), t)` and its derivative `σ(z) - t`.
fn bce_with_logit(z: f64, t: f64) -> (f64, f64) {
    let loss = z.max(0.0) - t * z + (-z.abs()).exp().ln_1p();
    let sigma = 1.0 / (1.0 + (-z).exp());
    (loss, sigma - t)
}

/// Number of conditional tasks a label of rank `y` takes part in.
fn ordinal_tasks(y: usize, thresholds: usize) -> usize {
    (y + 1).min(thresholds)
}

/// Per-sample conditional ordinal losses: sample `i` contributes the mean
/// BCE over the tasks `k ≤ y_i`, task `k` predicting `y > k`.
pub fn ordinal_terms(threshold_logits: &Tensor, targets: &[usize]) -> Result<SampleLosses> {
    let thresholds = threshold_logits.shape().get(1).copied().unwrap_or(0);
    if thresholds == 0 {
        return Err(Error::Contract("ordinal loss needs at least one threshold logit".into()));
    }
    let (b, _) = check_logits(threshold_logits, targets, thresholds + 1)?;
    let mut values = Vec::with_capacity(b);
    let mut grads = vec![0.0; b * thresholds];
    for (i, &y) in targets.iter().enumerate() {
        let row = threshold_logits.row(i);
        let tasks = ordinal_tasks(y, thresholds);
        let mut sum = 0.0;
        for k in 0..tasks {
            let (loss, d) = bce_with_logit(row[k], f64::from(u8::from(y > k)));
            sum += loss;
            grads[i * thresholds + k] = d / tasks as f64;
        }
        values.push(sum / tasks as f64);
    }
    Ok(SampleLosses {
        values,
        grads,
        width: thresholds,
    })
}

/// Coefficients turning ordinal per-sample losses into the pooled objective
/// `Σ_k Σ_{i∈S_k} BCE / Σ_k |S_k|`.
fn ordinal_pool_coefficients(targets: &[usize], thresholds: usize) -> Vec<f64> {
    let total: usize = targets.iter().map(|&y| ordinal_tasks(y, thresholds)).sum();
    targets
        .iter()
        .map(|&y| ordinal_tasks(y, thresholds) as f64 / total as f64)
        .collect()
}

/// Pooled conditional ordinal loss over the batch.
pub fn ordinal_corn_loss(threshold_logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let terms = ordinal_terms(threshold_logits, targets)?;
    Ok(terms.combine(&ordinal_pool_coefficients(targets, terms.width)).0)
}

/// Rank = number of leading thresholds whose running product of `σ(z_k)`
/// exceeds one half.
pub fn ordinal_predict(threshold_logits: &Tensor) -> Vec<usize> {
    let rows = threshold_logits.shape()[0];
    (0..rows)
        .map(|i| {
            let mut prob = 1.0;
            let mut rank = 0;
            for &z in threshold_logits.row(i) {
                prob *= 1.0 / (1.0 + (-z).exp());
                if prob > 0.5 {
                    rank += 1;
                } else {
                    break;
                }
            }
            rank
        })
        .collect()
}

/// Argmax over class logits; the lowest index wins ties.
pub fn argmax_predict(logits: &Tensor) -> Vec<usize> {
    let rows = logits.shape()[0];
    (0..rows)
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Severity predictions under the given variant's head semantics.
pub fn predict(variant: LossKind, severity_logits: &Tensor) -> Vec<usize> {
    match variant {
        LossKind::Ordinal => ordinal_predict(severity_logits),
        _ => argmax_predict(severity_logits),
    }
}

/// Per-sample severity losses for any variant.
pub fn severity_terms(variant: &LossVariant, logits: &Tensor, targets: &[usize]) -> Result<SampleLosses> {
    variant.validate()?;
    match variant {
        LossVariant::Ce => softmax_ce_terms(logits, targets),
        LossVariant::WeightedCe { weights } => weighted_ce_terms(logits, targets, weights),
        LossVariant::Focal { gamma } => focal_terms(logits, targets, *gamma),
        LossVariant::Ordinal => ordinal_terms(logits, targets),
    }
}

/// Unreweighted batch objective for a variant: plain mean for CE and focal,
/// weight-normalized mean for weighted CE, pooled task mean for ordinal.
/// Returns the value and its gradient with respect to the severity logits.
pub fn batch_objective(variant: &LossVariant, terms: &SampleLosses, targets: &[usize]) -> (f64, Vec<f64>) {
    let n = targets.len();
    let coef: Vec<f64> = match variant {
        LossVariant::Ce | LossVariant::Focal { .. } => vec![1.0 / n as f64; n],
        LossVariant::WeightedCe { weights } => {
            let total: f64 = targets.iter().map(|&t| weights[t]).sum();
            if total > 0.0 {
                vec![1.0 / total; n]
            } else {
                vec![0.0; n]
            }
        }
        LossVariant::Ordinal => ordinal_pool_coefficients(targets, terms.width),
    };
    terms.combine(&coef)
}

/// Mean softmax cross-entropy of the axis head, with its logit gradient.
pub fn axis_loss_terms(axis_logits: &Tensor, axis_targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let terms = softmax_ce_terms(axis_logits, axis_targets)?;
    let n = terms.len();
    Ok(terms.combine(&vec![1.0 / n as f64; n]))
}

pub fn axis_loss(axis_logits: &Tensor, axis_targets: &[usize]) -> Result<f64> {
    Ok(axis_loss_terms(axis_logits, axis_targets)?.0)
}

pub const NUM_CLASSES: usize = 3;

/// Per-class mean severity loss of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLoss {
    pub loss: [f64; NUM_CLASSES],
    pub count: [usize; NUM_CLASSES],
    /// Gradient of each class mean with respect to the severity logits,
    /// present when built from per-sample gradients.
    pub logit_grads: Option<[Vec<f64>; NUM_CLASSES]>,
}

impl ClassLoss {
    pub fn present(&self, c: usize) -> bool {
        self.count[c] > 0
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_CLASSES).filter(|&c| self.present(c))
    }
}

fn class_coefficients(targets: &[usize], sum: bool) -> Result<([usize; NUM_CLASSES], [Vec<f64>; NUM_CLASSES])> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut count = [0usize; NUM_CLASSES];
    for &t in targets {
        if t >= NUM_CLASSES {
            return Err(Error::Label {
                label: t,
                classes: NUM_CLASSES,
            });
        }
        count[t] += 1;
    }
    let coef = std::array::from_fn(|c| {
        targets
            .iter()
            .map(|&t| {
                if t != c {
                    0.0
                } else if sum {
                    1.0
                } else {
                    1.0 / count[c] as f64
                }
            })
            .collect()
    });
    Ok((count, coef))
}

/// Mean of per-sample losses within each true class.
pub fn per_class_losses(per_sample: &[f64], targets: &[usize]) -> Result<ClassLoss> {
    if per_sample.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} losses for {} targets",
            per_sample.len(),
            targets.len()
        )));
    }
    let (count, coef) = class_coefficients(targets, false)?;
    let loss = std::array::from_fn(|c| per_sample.iter().zip(&coef[c]).map(|(l, w)| l * w).sum());
    Ok(ClassLoss {
        loss,
        count,
        logit_grads: None,
    })
}

/// Per-class reduction of per-sample terms, keeping logit gradients. With
/// `sum` the class members are summed instead of averaged.
pub fn per_class_terms(terms: &SampleLosses, targets: &[usize], sum: bool) -> Result<ClassLoss> {
    if terms.len() != targets.len() {
        return Err(Error::Contract(format!("{} losses for {} targets", terms.len(), targets.len())));
    }
    let (count, coef) = class_coefficients(targets, sum)?;
    let parts: [(f64, Vec<f64>); NUM_CLASSES] = std::array::from_fn(|c| terms.combine(&coef[c]));
    let loss = std::array::from_fn(|c| parts[c].0);
    let [(_, g0), (_, g1), (_, g2)] = parts;
    Ok(ClassLoss {
        loss,
        count,
        logit_grads: Some([g0, g1, g2]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor {
        let w = rows[0].len();
        Tensor::new(vec![rows.len(), w], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn ce_uniform_saturated_and_shifted() {
        let z = logits(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
        for l in softmax_ce(&z, &[0, 2]).unwrap() {
            assert!((l - 3f64.ln()).abs() < 1e-15);
        }
        let z = logits(&[&[20.0, 0.0, 0.0]]);
        assert!(softmax_ce(&z, &[0]).unwrap()[0] < 1e-6);

        let z = logits(&[&[0.3, -1.2, 2.0], &[1.0, 0.5, -0.5]]);
        let shifted = logits(&[&[5.3, 3.8, 7.0], &[6.0, 5.5, 4.5]]);
        let a = softmax_ce(&z, &[1, 0]).unwrap();
        let b = softmax_ce(&shifted, &[1, 0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_target_is_a_label_error() {
        let z = logits(&[&[0.0, 0.0, 0.0]]);
        assert!(matches!(softmax_ce(&z, &[3]), Err(Error::Label { label: 3, classes: 3 })));
        assert!(matches!(axis_loss(&z, &[5]), Err(Error::Label { .. })));
    }

    #[test]
    fn per_class_examples() {
        let c = per_class_losses(&[1.0, 3.0], &[0, 0]).unwrap();
        assert_eq!(c.loss[0], 2.0);
        assert!(!c.present(1) && !c.present(2));
        let c = per_class_losses(&[0.5, 1.5, 2.5], &[0, 1, 2]).unwrap();
        assert_eq!(c.loss, [0.5, 1.5, 2.5]);
        assert!(matches!(per_class_losses(&[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn inverse_frequency_weights() {
        let w = weighted_ce_weights(&[426, 60, 46]).unwrap();
        let expected = [0.4163, 2.9556, 3.8551];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 5e-5, "{a} vs {b}");
        }
        assert_eq!(weighted_ce_weights(&[7, 7, 7]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(weighted_ce_weights(&[5, 5, 0]).unwrap()[2], 0.0);
        assert!(weighted_ce_weights(&[0, 0, 0]).is_err());
    }

    #[test]
    fn focal_reductions() {
        let z = logits(&[&[0.0, 0.0, 0.0]]);
        let expected = (2.0f64 / 3.0).powi(2) * 3f64.ln();
        assert!((focal_loss(&z, &[1], 2.0).unwrap()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.4883).abs() < 1e-4);

        let z = logits(&[&[20.0, 0.0, 0.0]]);
        assert!(focal_loss(&z, &[0], 2.0).unwrap()[0] < 1e-8);

        let z = logits(&[&[0.7, -0.3, 1.1], &[-2.0, 0.4, 0.0]]);
        let a = focal_terms(&z, &[2, 0], 0.0).unwrap();
        let b = softmax_ce_terms(&z, &[2, 0]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values).chain(a.grads.iter().zip(&b.grads)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(focal_loss(&z, &[0, 0], -1.0).is_err());
    }

    #[test]
    fn ordinal_examples() {
        let z = logits(&[&[0.0, 0.0]]);
        let terms = ordinal_terms(&z, &[0]).unwrap();
        assert!((terms.values[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(terms.grads[1], 0.0);
        assert!((ordinal_corn_loss(&z, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);

        assert_eq!(ordinal_predict(&logits(&[&[20.0, 20.0]])), vec![2]);
        assert_eq!(ordinal_predict(&logits(&[&[-20.0, 50.0]])), vec![0]);
        assert_eq!(ordinal_predict(&logits(&[&[20.0, -20.0]])), vec![1]);
    }

    #[test]
    fn ordinal_two_classes_is_binary_ce() {
        let z = logits(&[&[0.8], &[-1.7], &[3.0]]);
        let y = [1, 0, 0];
        let loss = ordinal_corn_loss(&z, &y).unwrap();
        let bce: f64 = z
            .data()
            .iter()
            .zip(y)
            .map(|(&zi, yi)| {
                let p = 1.0 / (1.0 + (-zi).exp());
                if yi == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss - bce).abs() < 1e-12);
    }

    #[test]
    fn axis_loss_is_mean_ce() {
        let z = logits(&[&[0.0, 0.0, 0.0]]);
        assert!((axis_loss(&z, &[2]).unwrap() - 3f64.ln()).abs() < 1e-15);
        let z = logits(&[&[0.0, 20.0, 0.0]]);
        assert!(axis_loss(&z, &[1]).unwrap() < 1e-6);
        let z = logits(&[&[0.1, -0.4, 0.9], &[1.3, 0.2, -0.6], &[0.0, 0.5, 0.5]]);
        let y = [2, 0, 1];
        let per = softmax_ce(&z, &y).unwrap();
        let mean = per.iter().sum::<f64>() / 3.0;
        assert!((axis_loss(&z, &y).unwrap() - mean).abs() < 1e-12);
    }
}
