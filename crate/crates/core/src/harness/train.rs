//! The training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batching::{self, BatchPlan, BatchingMode, ClassIndexSets};
use crate::error::{Error, Result};
use crate::harness::config::{ClassReduction, ExperimentConfig};
use crate::losses::{self, LossKind, LossVariant, NUM_CLASSES};
use crate::metrics::{self, MetricsReport};
use crate::nn::{self, AdamConfig, AdamState, ParamStore, TapeLoss, Tensor};
use crate::reweight::{self, AlphaWeights, NORM_FLOOR};
use crate::rng::{self, label};
use crate::synth::augment::{center_crop, normalize, rotate, rotation_angle};
use crate::synth::{self, ScanSample};

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean class weight over the batches containing each class; absent
    /// without reweighting.
    pub mean_alpha: Option<[Option<f64>; NUM_CLASSES]>,
    pub validation: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub train_class_counts: [usize; NUM_CLASSES],
    pub val_class_counts: [usize; NUM_CLASSES],
    pub initial_validation: MetricsReport,
    pub epochs: Vec<EpochRecord>,
    pub final_validation: MetricsReport,
    /// Dataset indices of the validation samples, with their labels and the
    /// final-epoch predictions.
    pub val_indices: Vec<usize>,
    pub val_true: Vec<usize>,
    pub val_pred: Vec<usize>,
    pub wall_clock_seconds: f64,
}

/// Cached, standardized and cropped images of a dataset subset.
struct Prepared {
    crop: usize,
    images: Vec<Vec<f64>>,
}

impl Prepared {
    fn new(dataset: &[ScanSample], indices: &[usize], crop: usize) -> Result<Self> {
        let images = indices
            .iter()
            .map(|&i| Ok(center_crop(&normalize(&dataset[i].image), crop, crop)?.data))
            .collect::<Result<_>>()?;
        Ok(Self { crop, images })
    }

    fn tensor(&self, rows: impl Iterator<Item = Vec<f64>>) -> Result<Tensor> {
        let data: Vec<f64> = rows.flatten().collect();
        let b = data.len() / (self.crop * self.crop);
        Tensor::new(vec![b, 1, self.crop, self.crop], data)
    }
}

/// Severity predictions of `params` on prepared images, in order.
fn predict_all(params: &ParamStore, prepared: &Prepared, kind: LossKind) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(prepared.images.len());
    for chunk in prepared.images.chunks(EVAL_BATCH) {
        let x = prepared.tensor(chunk.iter().cloned())?;
        let tape = nn::forward(params, &x)?;
        preds.extend(losses::predict(kind, tape.severity_logits()));
    }
    Ok(preds)
}

fn evaluate(params: &ParamStore, prepared: &Prepared, kind: LossKind, truth: &[usize]) -> Result<(MetricsReport, Vec<usize>)> {
    let preds = predict_all(params, prepared, kind)?;
    Ok((metrics::report(truth, &preds)?, preds))
}

fn class_counts(labels: impl Iterator<Item = usize>) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

struct StepOutcome {
    total: f64,
    alphas: Option<AlphaWeights>,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut ParamStore,
    adam: &mut AdamState,
    config: &ExperimentConfig,
    variant: &LossVariant,
    x: &Tensor,
    severity: &[usize],
    axis: &[usize],
    lr: f64,
) -> Result<StepOutcome> {
    let tape = nn::forward(params, x)?;
    let terms = losses::severity_terms(variant, tape.severity_logits(), severity)?;
    let (axis_value, axis_grad) = losses::axis_loss_terms(tape.axis_logits(), axis)?;
    let (cls, severity_grad, alphas) = if config.reweight {
        let classes = losses::per_class_terms(&terms, severity, config.class_reduction == ClassReduction::Sum)?;
        let norms = reweight::class_grad_norms(&tape, &classes, params)?;
        let alphas = reweight::compute_alpha(&norms, NORM_FLOOR)?;
        let bundle = reweight::combine_losses(&classes, &alphas, axis_value)?;
        (bundle.cls, bundle.severity_grad()?, Some(alphas))
    } else {
        let (value, grad) = losses::batch_objective(variant, &terms, severity);
        (value, grad, None)
    };
    let loss = TapeLoss::new(&tape, cls + axis_value, severity_grad, axis_grad)?;
    if !loss.value.is_finite() {
        return Err(Error::NumericFault { layer: "loss".into() });
    }
    params.zero_grad();
    nn::backward_total(&tape, params, &loss, 1.0)?;
    nn::adam_step(params, adam, lr, AdamConfig::default())?;
    Ok(StepOutcome {
        total: loss.value,
        alphas,
    })
}

fn epoch_plan(config: &ExperimentConfig, sets: &ClassIndexSets, n_train: usize, epoch: u64) -> Result<BatchPlan> {
    match config.batching {
        BatchingMode::Standard => batching::standard_epoch(n_train, config.batch_size, config.seed, epoch),
        BatchingMode::Rotating => batching::rotating_epoch(sets, config.seed, epoch),
    }
}

/// Trains one configuration on `dataset` and evaluates on the held-out
/// subjects after every epoch.
pub fn train_on(config: &ExperimentConfig, dataset: &[ScanSample]) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    if let Some(s) = dataset.first() {
        if s.image.height < config.crop || s.image.width < config.crop {
            return Err(Error::Config(format!(
                "images are {}x{}, smaller than crop {}",
                s.image.height, s.image.width, config.crop
            )));
        }
    }
    let split = synth::split_by_subject(dataset, config.split_ratio, config.seed)?;
    let (train_idx, val_idx) = split.partition(dataset);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config("split left an empty partition".into()));
    }
    let train_sev: Vec<usize> = train_idx.iter().map(|&i| dataset[i].severity).collect();
    let train_axis: Vec<usize> = train_idx.iter().map(|&i| dataset[i].axis).collect();
    let val_true: Vec<usize> = val_idx.iter().map(|&i| dataset[i].severity).collect();
    let train_class_counts = class_counts(train_sev.iter().copied());
    let val_class_counts = class_counts(val_true.iter().copied());

    // positions into the training subset, grouped by class
    let positions: Vec<usize> = (0..train_idx.len()).collect();
    let sets = ClassIndexSets::from_labels(&positions, |p| train_sev[p])?;

    let variant = match config.loss {
        LossKind::Ce => LossVariant::Ce,
        LossKind::WeightedCe => LossVariant::WeightedCe {
            weights: losses::weighted_ce_weights(&train_class_counts)?,
        },
        LossKind::Focal => LossVariant::Focal {
            gamma: config.focal_gamma,
        },
        LossKind::Ordinal => LossVariant::Ordinal,
    };

    let train_images = Prepared::new(dataset, &train_idx, config.crop)?;
    let val_images = Prepared::new(dataset, &val_idx, config.crop)?;

    let mut params = nn::init_model(&config.model_config())?;
    let mut adam = AdamState::new(&params);
    let (initial_validation, mut val_pred) = evaluate(&params, &val_images, config.loss, &val_true)?;
    let mut final_validation = initial_validation.clone();

    let batches_per_epoch = epoch_plan(config, &sets, train_idx.len(), 0)?.len();
    let total_steps = config.epochs * batches_per_epoch;
    let mut step = 0;
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let plan = epoch_plan(config, &sets, train_idx.len(), epoch as u64)?;
        let mut loss_sum = 0.0;
        let mut alpha_sum = [0.0; NUM_CLASSES];
        let mut alpha_n = [0usize; NUM_CLASSES];
        for (b, batch) in plan.batches.iter().enumerate() {
            let rows = batch.iter().enumerate().map(|(slot, &p)| {
                let img = &train_images.images[p];
                if config.rotation {
                    let key = rng::derive_key(config.seed, label::AUGMENT, &[epoch as u64, b as u64, slot as u64]);
                    let image = synth::Image {
                        height: config.crop,
                        width: config.crop,
                        data: img.clone(),
                    };
                    rotate(&image, rotation_angle(key)).data
                } else {
                    img.clone()
                }
            });
            let wrap = |source: Error| Error::Training {
                epoch,
                batch: b,
                source: Box::new(source),
            };
            let x = train_images.tensor(rows).map_err(wrap)?;
            let severity: Vec<usize> = batch.iter().map(|&p| train_sev[p]).collect();
            let axis: Vec<usize> = batch.iter().map(|&p| train_axis[p]).collect();
            let lr = nn::cosine_lr(step, total_steps, config.lr_max, config.lr_min).map_err(wrap)?;
            let outcome =
                train_step(&mut params, &mut adam, config, &variant, &x, &severity, &axis, lr).map_err(wrap)?;
            step += 1;
            loss_sum += outcome.total;
            if let Some(alphas) = outcome.alphas {
                for c in 0..NUM_CLASSES {
                    if let Some(a) = alphas.get(c) {
                        alpha_sum[c] += a;
                        alpha_n[c] += 1;
                    }
                }
            }
        }
        let (validation, preds) = evaluate(&params, &val_images, config.loss, &val_true)?;
        val_pred = preds;
        final_validation = validation.clone();
        epochs.push(EpochRecord {
            epoch,
            batches: plan.len(),
            train_loss: loss_sum / plan.len() as f64,
            mean_alpha: config
                .reweight
                .then(|| std::array::from_fn(|c| (alpha_n[c] > 0).then(|| alpha_sum[c] / alpha_n[c] as f64))),
            validation,
        });
    }

    Ok(RunResult {
        config: config.clone(),
        train_class_counts,
        val_class_counts,
        initial_validation,
        epochs,
        final_validation,
        val_indices: val_idx,
        val_true,
        val_pred,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Loads the dataset named by `config.data` and trains on it.
pub fn train(config: &ExperimentConfig) -> Result<RunResult> {
    let dir = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset path configured".into()))?;
    let (_, dataset) = synth::read_dataset(dir)?;
    train_on(config, &dataset)
}
