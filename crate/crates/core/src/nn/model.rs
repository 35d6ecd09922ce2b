//! Two-head convolutional classifier with a recorded forward pass.
//!
//! Layout: `conv3x3 -> maxpool2 -> relu` twice, flatten, dense trunk with
//! ReLU, then two affine heads (severity, axis) over the trunk features.
//! With frequency fusion a half-width copy of the encoder runs on the
//! log-magnitude spectrum and its trunk output is concatenated to the
//! spatial one before the heads.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dft::dft_features;
use crate::nn::layers::{self, Dims};
use crate::nn::params::{Param, ParamStore};
use crate::nn::tensor::Tensor;
use crate::rng;

pub const SEVERITY_CLASSES: usize = 3;
pub const AXIS_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub trunk_width: usize,
    pub severity_classes: usize,
    pub axis_classes: usize,
    /// Severity head emits `K - 1` threshold logits instead of `K` class logits.
    pub ordinal_head: bool,
    pub dft_fusion: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 28,
            width: 28,
            conv1_channels: 8,
            conv2_channels: 16,
            trunk_width: 64,
            severity_classes: SEVERITY_CLASSES,
            axis_classes: AXIS_CLASSES,
            ordinal_head: false,
            dft_fusion: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small model used by gradient checks.
    pub fn tiny(seed: u64) -> Self {
        Self {
            height: 8,
            width: 8,
            conv1_channels: 4,
            conv2_channels: 4,
            trunk_width: 6,
            dft_fusion: true,
            seed,
            ..Self::default()
        }
    }

    pub fn severity_outputs(&self) -> usize {
        if self.ordinal_head {
            self.severity_classes - 1
        } else {
            self.severity_classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.severity_classes != SEVERITY_CLASSES || self.axis_classes != AXIS_CLASSES {
            return Err(Error::Config(format!(
                "expected {SEVERITY_CLASSES} severity and {AXIS_CLASSES} axis classes, got {} and {}",
                self.severity_classes, self.axis_classes
            )));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::Config(format!(
                "input must be at least 4x4, got {}x{}",
                self.height, self.width
            )));
        }
        if self.conv1_channels == 0 || self.conv2_channels == 0 || self.trunk_width == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn branch_shape(&self, divisor: usize) -> BranchShape {
        let half = |n: usize| (n / divisor).max(1);
        BranchShape {
            input: Dims {
                channels: 1,
                height: self.height,
                width: self.width,
            },
            conv1: half(self.conv1_channels),
            conv2: half(self.conv2_channels),
            trunk: half(self.trunk_width),
        }
    }

    fn feature_width(&self) -> usize {
        let spatial = self.branch_shape(1).trunk;
        if self.dft_fusion {
            spatial + self.branch_shape(2).trunk
        } else {
            spatial
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BranchShape {
    input: Dims,
    conv1: usize,
    conv2: usize,
    trunk: usize,
}

impl BranchShape {
    fn conv1_out(&self) -> Dims {
        Dims {
            channels: self.conv1,
            ..self.input
        }
    }

    fn pool1_out(&self) -> Dims {
        self.input.pooled(self.conv1)
    }

    fn conv2_out(&self) -> Dims {
        Dims {
            channels: self.conv2,
            ..self.pool1_out()
        }
    }

    fn pool2_out(&self) -> Dims {
        self.pool1_out().pooled(self.conv2)
    }

    fn flat(&self) -> usize {
        self.pool2_out().size()
    }
}

/// Parameter indices of one encoder branch.
#[derive(Debug, Clone, Copy)]
struct BranchParams {
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    dense_w: usize,
    dense_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    spatial: BranchParams,
    freq: Option<BranchParams>,
    severity_w: usize,
    severity_b: usize,
    axis_w: usize,
    axis_b: usize,
}

impl Layout {
    fn of(config: &ModelConfig) -> Self {
        let branch = |start: usize| BranchParams {
            conv1_w: start,
            conv1_b: start + 1,
            conv2_w: start + 2,
            conv2_b: start + 3,
            dense_w: start + 4,
            dense_b: start + 5,
        };
        let freq = config.dft_fusion.then(|| branch(6));
        let heads = if config.dft_fusion { 12 } else { 6 };
        Self {
            spatial: branch(0),
            freq,
            severity_w: heads,
            severity_b: heads + 1,
            axis_w: heads + 2,
            axis_b: heads + 3,
        }
    }
}

/// Builds a freshly initialized parameter store.
///
/// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero. Each
/// parameter draws from its own stream keyed by the config seed and its
/// position, so the result is a pure function of the config.
pub fn init_model(config: &ModelConfig) -> Result<ParamStore> {
    config.validate()?;
    let mut specs: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
    let mut branch = |prefix: &str, shape: BranchShape| {
        specs.push((format!("{prefix}.conv1.weight"), vec![shape.conv1, 1, 3, 3], 9, shape.conv1 * 9));
        specs.push((format!("{prefix}.conv1.bias"), vec![shape.conv1], 0, 0));
        specs.push((
            format!("{prefix}.conv2.weight"),
            vec![shape.conv2, shape.conv1, 3, 3],
            shape.conv1 * 9,
            shape.conv2 * 9,
        ));
        specs.push((format!("{prefix}.conv2.bias"), vec![shape.conv2], 0, 0));
        specs.push((
            format!("{prefix}.trunk.weight"),
            vec![shape.trunk, shape.flat()],
            shape.flat(),
            shape.trunk,
        ));
        specs.push((format!("{prefix}.trunk.bias"), vec![shape.trunk], 0, 0));
    };
    branch("spatial", config.branch_shape(1));
    if config.dft_fusion {
        branch("freq", config.branch_shape(2));
    }
    let features = config.feature_width();
    let sev = config.severity_outputs();
    specs.push(("severity_head.weight".into(), vec![sev, features], features, sev));
    specs.push(("severity_head.bias".into(), vec![sev], 0, 0));
    specs.push(("axis_head.weight".into(), vec![config.axis_classes, features], features, config.axis_classes));
    specs.push(("axis_head.bias".into(), vec![config.axis_classes], 0, 0));

    let params = specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape, fan_in, fan_out))| {
            let mut value = Tensor::zeros(shape.clone());
            if fan_in + fan_out > 0 {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut stream = rng::stream(config.seed, rng::label::INIT, &[i as u64]);
                for v in value.data_mut() {
                    *v = stream.random_range(-bound..bound);
                }
            }
            let head = name.starts_with("severity_head.");
            Param {
                name,
                grad: Tensor::zeros(shape),
                value,
                head,
            }
        })
        .collect();
    ParamStore::new(config.clone(), params)
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
struct BranchCache {
    input: Vec<f64>,
    pool1_arg: Vec<usize>,
    act1: Vec<f64>,
    pool2_arg: Vec<usize>,
    act2: Vec<f64>,
    hidden: Vec<f64>,
}

/// Everything needed to replay the backward pass of one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    id: u64,
    version: u64,
    batch: usize,
    layout: Layout,
    spatial_shape: BranchShape,
    freq_shape: BranchShape,
    spatial: BranchCache,
    freq: Option<BranchCache>,
    features: Vec<f64>,
    feature_width: usize,
    severity_logits: Tensor,
    axis_logits: Tensor,
}

impl ForwardTape {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn severity_logits(&self) -> &Tensor {
        &self.severity_logits
    }

    pub fn axis_logits(&self) -> &Tensor {
        &self.axis_logits
    }

    /// Head input features, `B x F`.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Signature of every piecewise-linear branch decision taken in the
    /// forward pass (pool winners and ReLU on/off). Two forwards with equal
    /// signatures lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for cache in std::iter::once(&self.spatial).chain(self.freq.as_ref()) {
            sig.extend(cache.pool1_arg.iter().map(|&a| a as u64));
            sig.extend(cache.pool2_arg.iter().map(|&a| a as u64));
            for acts in [&cache.act1, &cache.act2, &cache.hidden] {
                sig.extend(acts.iter().map(|&v| u64::from(v > 0.0)));
            }
        }
        sig
    }

    fn check_fresh(&self, params: &ParamStore) -> Result<()> {
        if params.version() != self.version {
            return Err(Error::StaleTape {
                tape: self.version,
                store: params.version(),
            });
        }
        Ok(())
    }
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault {
            layer: layer.to_string(),
        })
    }
}

fn branch_forward(
    params: &ParamStore,
    idx: BranchParams,
    shape: BranchShape,
    input: Vec<f64>,
    batch: usize,
    prefix: &str,
) -> Result<BranchCache> {
    let conv1 = layers::conv3x3_forward(
        &input,
        batch,
        shape.input,
        params.value(idx.conv1_w),
        params.value(idx.conv1_b),
        shape.conv1,
    );
    let (mut act1, pool1_arg) = layers::maxpool2_forward(&conv1, batch, shape.conv1_out());
    layers::relu_inplace(&mut act1);
    check_finite(&act1, &format!("{prefix}.conv1"))?;

    let conv2 = layers::conv3x3_forward(
        &act1,
        batch,
        shape.pool1_out(),
        params.value(idx.conv2_w),
        params.value(idx.conv2_b),
        shape.conv2,
    );
    let (mut act2, pool2_arg) = layers::maxpool2_forward(&conv2, batch, shape.conv2_out());
    layers::relu_inplace(&mut act2);
    check_finite(&act2, &format!("{prefix}.conv2"))?;

    let mut hidden = layers::dense_forward(
        &act2,
        batch,
        shape.flat(),
        params.value(idx.dense_w),
        params.value(idx.dense_b),
        shape.trunk,
    );
    layers::relu_inplace(&mut hidden);
    check_finite(&hidden, &format!("{prefix}.trunk"))?;

    Ok(BranchCache {
        input,
        pool1_arg,
        act1,
        pool2_arg,
        act2,
        hidden,
    })
}

/// Runs the model on a `B x 1 x H x W` batch and records a tape.
pub fn forward(params: &ParamStore, batch: &Tensor) -> Result<ForwardTape> {
    let config = params.config();
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != config.height || shape[3] != config.width {
        return Err(Error::Config(format!(
            "batch shape {shape:?} does not match model input 1x{}x{}",
            config.height, config.width
        )));
    }
    let b = shape[0];
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    check_finite(batch.data(), "input")?;

    let layout = Layout::of(config);
    let spatial_shape = config.branch_shape(1);
    let freq_shape = config.branch_shape(2);
    let spatial = branch_forward(params, layout.spatial, spatial_shape, batch.data().to_vec(), b, "spatial")?;

    let freq = match layout.freq {
        Some(idx) => {
            let plane = config.height * config.width;
            let mut spectra = Vec::with_capacity(b * plane);
            for img in batch.data().chunks(plane) {
                spectra.extend(dft_features(img, config.height, config.width)?);
            }
            Some(branch_forward(params, idx, freq_shape, spectra, b, "freq")?)
        }
        None => None,
    };

    let feature_width = config.feature_width();
    let mut features = Vec::with_capacity(b * feature_width);
    for i in 0..b {
        features.extend_from_slice(&spatial.hidden[i * spatial_shape.trunk..][..spatial_shape.trunk]);
        if let Some(f) = &freq {
            features.extend_from_slice(&f.hidden[i * freq_shape.trunk..][..freq_shape.trunk]);
        }
    }

    let sev_out = config.severity_outputs();
    let severity = layers::dense_forward(
        &features,
        b,
        feature_width,
        params.value(layout.severity_w),
        params.value(layout.severity_b),
        sev_out,
    );
    check_finite(&severity, "severity_head")?;
    let axis = layers::dense_forward(
        &features,
        b,
        feature_width,
        params.value(layout.axis_w),
        params.value(layout.axis_b),
        config.axis_classes,
    );
    check_finite(&axis, "axis_head")?;

    Ok(ForwardTape {
        id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
        version: params.version(),
        batch: b,
        layout,
        spatial_shape,
        freq_shape,
        spatial,
        freq,
        features,
        feature_width,
        severity_logits: Tensor::new(vec![b, sev_out], severity)?,
        axis_logits: Tensor::new(vec![b, config.axis_classes], axis)?,
    })
}

/// A scalar loss defined on the logits of one tape, carried as its value and
/// its gradient with respect to both logit blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeLoss {
    tape_id: u64,
    pub value: f64,
    pub d_severity: Vec<f64>,
    pub d_axis: Vec<f64>,
}

impl TapeLoss {
    pub fn new(tape: &ForwardTape, value: f64, d_severity: Vec<f64>, d_axis: Vec<f64>) -> Result<Self> {
        if d_severity.len() != tape.severity_logits.len() || d_axis.len() != tape.axis_logits.len() {
            return Err(Error::Contract(format!(
                "logit gradient sizes {}/{} do not match tape logits {}/{}",
                d_severity.len(),
                d_axis.len(),
                tape.severity_logits.len(),
                tape.axis_logits.len()
            )));
        }
        Ok(Self {
            tape_id: tape.id,
            value,
            d_severity,
            d_axis,
        })
    }

    /// Loss that depends only on the severity logits.
    pub fn severity_only(tape: &ForwardTape, value: f64, d_severity: Vec<f64>) -> Result<Self> {
        let zeros = vec![0.0; tape.axis_logits.len()];
        Self::new(tape, value, d_severity, zeros)
    }

    pub fn tape_id(&self) -> u64 {
        self.tape_id
    }

    fn check_handle(&self, tape: &ForwardTape) -> Result<()> {
        if self.tape_id != tape.id {
            return Err(Error::InvalidHandle);
        }
        Ok(())
    }
}

fn branch_backward(
    params: &mut ParamStore,
    idx: BranchParams,
    shape: BranchShape,
    cache: &BranchCache,
    batch: usize,
    mut d_hidden: Vec<f64>,
) {
    layers::relu_backward_inplace(&mut d_hidden, &cache.hidden);
    let flat = shape.flat();
    {
        let (dw, db) = two_grads(params, idx.dense_w, idx.dense_b);
        layers::dense_param_grads(&cache.act2, batch, flat, shape.trunk, &d_hidden, dw, db);
    }
    let mut d_act2 = vec![0.0; cache.act2.len()];
    layers::dense_input_grad(batch, flat, shape.trunk, params.value(idx.dense_w), &d_hidden, &mut d_act2);

    layers::relu_backward_inplace(&mut d_act2, &cache.act2);
    let conv2_out = shape.conv2_out();
    let d_conv2 = layers::maxpool2_backward(&d_act2, &cache.pool2_arg, batch * conv2_out.size());
    let weight2 = params.value(idx.conv2_w).to_vec();
    let mut d_act1 = {
        let (dw, db) = two_grads(params, idx.conv2_w, idx.conv2_b);
        layers::conv3x3_backward(&cache.act1, batch, shape.pool1_out(), &weight2, shape.conv2, &d_conv2, dw, db, true)
            .expect("input gradient requested")
    };

    layers::relu_backward_inplace(&mut d_act1, &cache.act1);
    let conv1_out = shape.conv1_out();
    let d_conv1 = layers::maxpool2_backward(&d_act1, &cache.pool1_arg, batch * conv1_out.size());
    let weight1 = params.value(idx.conv1_w).to_vec();
    let (dw, db) = two_grads(params, idx.conv1_w, idx.conv1_b);
    layers::conv3x3_backward(&cache.input, batch, shape.input, &weight1, shape.conv1, &d_conv1, dw, db, false);
}

/// Disjoint mutable borrows of two gradient buffers (`a < b`).
fn two_grads(params: &mut ParamStore, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = params.grads_split_mut(b);
    (lo[a].grad.data_mut(), hi[0].grad.data_mut())
}

/// Accumulates `upstream * d(loss)/d(theta)` into the gradient buffers.
pub fn backward_total(tape: &ForwardTape, params: &mut ParamStore, loss: &TapeLoss, upstream: f64) -> Result<()> {
    loss.check_handle(tape)?;
    tape.check_fresh(params)?;
    let b = tape.batch;
    let fw = tape.feature_width;
    let layout = tape.layout;
    let sev_out = tape.severity_logits.shape()[1];
    let axis_out = tape.axis_logits.shape()[1];
    let d_sev: Vec<f64> = loss.d_severity.iter().map(|g| g * upstream).collect();
    let d_axis: Vec<f64> = loss.d_axis.iter().map(|g| g * upstream).collect();

    {
        let (dw, db) = two_grads(params, layout.severity_w, layout.severity_b);
        layers::dense_param_grads(&tape.features, b, fw, sev_out, &d_sev, dw, db);
    }
    {
        let (dw, db) = two_grads(params, layout.axis_w, layout.axis_b);
        layers::dense_param_grads(&tape.features, b, fw, axis_out, &d_axis, dw, db);
    }
    let mut d_features = vec![0.0; b * fw];
    layers::dense_input_grad(b, fw, sev_out, params.value(layout.severity_w), &d_sev, &mut d_features);
    layers::dense_input_grad(b, fw, axis_out, params.value(layout.axis_w), &d_axis, &mut d_features);

    let st = tape.spatial_shape.trunk;
    let ft = tape.freq_shape.trunk;
    let mut d_spatial = Vec::with_capacity(b * st);
    let mut d_freq = Vec::with_capacity(b * ft);
    for row in d_features.chunks(fw) {
        d_spatial.extend_from_slice(&row[..st]);
        if tape.freq.is_some() {
            d_freq.extend_from_slice(&row[st..]);
        }
    }
    branch_backward(params, layout.spatial, tape.spatial_shape, &tape.spatial, b, d_spatial);
    if let (Some(idx), Some(cache)) = (layout.freq, tape.freq.as_ref()) {
        branch_backward(params, idx, tape.freq_shape, cache, b, d_freq);
    }
    Ok(())
}

/// Gradient of a severity-logit loss with respect to the severity head only,
/// flattened as `[weight (row-major), bias]`. Reads the tape; never touches
/// the gradient buffers of `params`.
pub fn head_grad(tape: &ForwardTape, loss: &TapeLoss, params: &ParamStore) -> Result<Vec<f64>> {
    loss.check_handle(tape)?;
    tape.check_fresh(params)?;
    if params.head_indices().is_empty() {
        return Err(Error::Contract("model has no severity head parameters".into()));
    }
    let b = tape.batch;
    let fw = tape.feature_width;
    let sev_out = tape.severity_logits.shape()[1];
    let mut dw = vec![0.0; sev_out * fw];
    let mut db = vec![0.0; sev_out];
    layers::dense_param_grads(&tape.features, b, fw, sev_out, &loss.d_severity, &mut dw, &mut db);
    dw.extend(db);
    Ok(dw)
}
