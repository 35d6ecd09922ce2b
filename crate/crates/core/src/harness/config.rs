use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batching::{BatchingMode, ROTATING_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::losses::{LossKind, DEFAULT_FOCAL_GAMMA};
use crate::nn::ModelConfig;
use crate::synth::augment::DEFAULT_CROP;

/// How member losses are reduced into a per-class loss before reweighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassReduction {
    Mean,
    Sum,
}

/// One training run. Serialized as a flat JSON object; omitted keys take
/// their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub batching: BatchingMode,
    /// Standard batching only; rotating batches always hold four samples.
    pub batch_size: usize,
    pub reweight: bool,
    pub class_reduction: ClassReduction,
    pub rotation: bool,
    pub dft_fusion: bool,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub split_ratio: f64,
    pub crop: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub trunk_width: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            batching: BatchingMode::Standard,
            batch_size: ROTATING_BATCH_SIZE,
            reweight: false,
            class_reduction: ClassReduction::Mean,
            rotation: false,
            dft_fusion: false,
            epochs: 30,
            lr_max: 1e-3,
            lr_min: 1e-5,
            seed: 0,
            data: None,
            split_ratio: 0.8,
            crop: DEFAULT_CROP,
            conv1_channels: 8,
            conv2_channels: 16,
            trunk_width: 64,
        }
    }
}

impl ExperimentConfig {
    /// Long schedule with the small learning rate used on full-size volumes.
    pub fn paper() -> Self {
        Self {
            epochs: 150,
            lr_max: 1e-5,
            lr_min: 0.0,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(Self::default()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Argument(format!("unknown preset {other:?}"))),
        }
    }

    pub fn effective_batch_size(&self) -> usize {
        match self.batching {
            BatchingMode::Standard => self.batch_size,
            BatchingMode::Rotating => ROTATING_BATCH_SIZE,
        }
    }

    /// Table label of the severity loss, with the fusion marker.
    pub fn method(&self) -> String {
        if self.dft_fusion {
            format!("{}+dft", self.loss.name())
        } else {
            self.loss.name().to_string()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            height: self.crop,
            width: self.crop,
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            trunk_width: self.trunk_width,
            ordinal_head: self.loss == LossKind::Ordinal,
            dft_fusion: self.dft_fusion,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal_gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.lr_max.is_finite() && self.lr_min.is_finite() && self.lr_max >= 0.0 && self.lr_min >= 0.0) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        self.model_config().validate()
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))
    }
}

/// Reads a grid file: a JSON array of config objects.
pub fn load_grid(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"loss": "focal", "batching": "rotating", "reweight": true}"#).unwrap();
        assert_eq!(c.loss, LossKind::Focal);
        assert_eq!(c.batching, BatchingMode::Rotating);
        assert_eq!(c.epochs, 30);
        assert_eq!(c.effective_batch_size(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"los": "ce"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"loss": "hinge"}"#).is_err());
    }

    #[test]
    fn ordinal_switches_head_width() {
        let c = ExperimentConfig {
            loss: LossKind::Ordinal,
            ..ExperimentConfig::default()
        };
        assert_eq!(c.model_config().severity_outputs(), 2);
        assert_eq!(c.method(), "ordinal");
    }

    #[test]
    fn paper_preset() {
        let p = ExperimentConfig::preset("paper").unwrap();
        assert_eq!((p.epochs, p.lr_max), (150, 1e-5));
        assert!(ExperimentConfig::preset("huge").is_err());
    }
}
