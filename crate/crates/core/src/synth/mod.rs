//! Synthetic severity-graded scans with subject structure.

pub mod artifacts;
pub mod augment;
pub mod image;
pub mod io;

use std::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use artifacts::{apply_artifact, ArtifactType};
pub use augment::{augment, center_crop, normalize, rotate};
pub use image::Image;
pub use io::{read_dataset, write_dataset};

use crate::error::{Error, Result};
use crate::rng::{self, label};

pub const DEFAULT_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSample {
    pub image: Image,
    pub severity: usize,
    pub axis: usize,
    pub subject_id: usize,
    pub artifact: ArtifactType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub artifact: ArtifactType,
    pub counts: [usize; 3],
    pub size: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Spec with the artifact's default class counts.
    pub fn for_artifact(artifact: ArtifactType, seed: u64) -> Self {
        Self {
            artifact,
            counts: artifact.default_counts(),
            size: DEFAULT_SIZE,
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() < 4 {
            return Err(Error::Generator(format!(
                "dataset needs at least 4 scans, counts are {:?}",
                self.counts
            )));
        }
        if self.size < 8 {
            return Err(Error::Generator(format!("image size {} too small", self.size)));
        }
        Ok(())
    }
}

/// Clean orientation-coded image of `(subject, axis)`.
///
/// Axis 0 carries a horizontal intensity gradient, axis 1 a vertical one and
/// axis 2 a diagonal one, each with a centered disc whose radius and
/// brightness vary by subject, plus faint smooth texture. Values are
/// rounded through `f32`.
pub fn base_image(seed: u64, subject: usize, axis: usize, size: usize) -> Image {
    let mut anatomy = rng::stream(seed, label::DATA, &[3, subject as u64]);
    let radius = anatomy.random_range(size as f64 / 5.0..size as f64 / 3.0);
    let disc = anatomy.random_range(0.3..0.5);
    let slope = anatomy.random_range(0.4..0.7);
    let mut texture_rng = rng::stream(seed, label::DATA, &[4, subject as u64, axis as u64]);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                texture_rng.random_range(1.0..3.0),
                texture_rng.random_range(1.0..3.0),
                texture_rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();

    let c = (size as f64 - 1.0) / 2.0;
    let scale = size as f64 - 1.0;
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / scale, y as f64 / scale);
            let gradient = match axis {
                0 => u,
                1 => v,
                _ => (u + v) / 2.0,
            };
            let mut value = 0.1 + slope * gradient;
            if (x as f64 - c).powi(2) + (y as f64 - c).powi(2) < radius * radius {
                value += disc;
            }
            value += waves
                .iter()
                .map(|&(fx, fy, phase)| 0.01 * (2.0 * PI * (fx * u + fy * v) + phase).sin())
                .sum::<f64>();
            data.push(value);
        }
    }
    Image {
        height: size,
        width: size,
        data,
    }
    .quantize_f32()
}

/// Generates the dataset described by `spec`.
///
/// Subjects receive 1-3 scans with distinct axes until the total count is
/// reached; severities are a seeded shuffle of the exact class counts.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<ScanSample>> {
    spec.validate()?;
    let total = spec.total();
    let mut structure = rng::stream(spec.seed, label::DATA, &[0]);
    let mut scans: Vec<(usize, usize)> = Vec::with_capacity(total);
    let mut subject = 0;
    while scans.len() < total {
        let k = structure.random_range(1..=3usize).min(total - scans.len());
        let axes: Vec<usize> = [0usize, 1, 2].choose_multiple(&mut structure, k).copied().collect();
        scans.extend(axes.into_iter().map(|a| (subject, a)));
        subject += 1;
    }
    if subject < 2 {
        return Err(Error::Generator("subject structure produced fewer than 2 subjects".into()));
    }

    let mut severities: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat_n(c, spec.counts[c])).collect();
    severities.shuffle(&mut rng::stream(spec.seed, label::DATA, &[1]));

    scans
        .into_iter()
        .zip(severities)
        .enumerate()
        .map(|(i, ((subject_id, axis), severity))| {
            let clean = base_image(spec.seed, subject_id, axis, spec.size);
            let key = rng::derive_key(spec.seed, label::DATA, &[2, i as u64]);
            let image = apply_artifact(&clean, spec.artifact, severity, key)?.quantize_f32();
            Ok(ScanSample {
                image,
                severity,
                axis,
                subject_id,
                artifact: spec.artifact,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_subjects: Vec<usize>,
    pub val_subjects: Vec<usize>,
    pub ratio: f64,
}

impl SplitManifest {
    /// Sample indices of `dataset` falling in the train and validation
    /// partitions, each in dataset order.
    pub fn partition(&self, dataset: &[ScanSample]) -> (Vec<usize>, Vec<usize>) {
        let train: std::collections::BTreeSet<usize> = self.train_subjects.iter().copied().collect();
        (0..dataset.len()).partition(|&i| train.contains(&dataset[i].subject_id))
    }
}

/// Seeded subject-level split: the first `⌈ratio · S⌉` subjects of a
/// shuffled subject list train, the rest validate.
pub fn split_by_subject(dataset: &[ScanSample], ratio: f64, seed: u64) -> Result<SplitManifest> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Split(format!("ratio {ratio} outside [0, 1]")));
    }
    let mut subjects: Vec<usize> = dataset.iter().map(|s| s.subject_id).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::Split(format!("need at least 2 subjects, found {}", subjects.len())));
    }
    subjects.shuffle(&mut rng::stream(seed, label::SPLIT, &[]));
    let n_train = (ratio * subjects.len() as f64).ceil() as usize;
    let val_subjects = subjects.split_off(n_train.min(subjects.len()));
    Ok(SplitManifest {
        train_subjects: subjects,
        val_subjects,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(counts: [usize; 3]) -> DatasetSpec {
        DatasetSpec {
            artifact: ArtifactType::Noise,
            counts,
            size: 32,
            seed: 17,
        }
    }

    #[test]
    fn class_counts_are_exact() {
        let data = generate_dataset(&DatasetSpec::for_artifact(ArtifactType::Noise, 1)).unwrap();
        let mut counts = [0; 3];
        for s in &data {
            counts[s.severity] += 1;
        }
        assert_eq!(counts, [426, 60, 46]);
    }

    #[test]
    fn severity_zero_dataset_equals_base_patterns() {
        let spec = small([4, 0, 0]);
        for s in generate_dataset(&spec).unwrap() {
            assert_eq!(s.severity, 0);
            assert_eq!(s.image, base_image(spec.seed, s.subject_id, s.axis, spec.size));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small([30, 10, 5]);
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    }

    #[test]
    fn subjects_hold_distinct_axes() {
        let data = generate_dataset(&small([60, 20, 20])).unwrap();
        let mut seen = std::collections::HashSet::new();
        for s in &data {
            assert!(seen.insert((s.subject_id, s.axis)));
        }
    }

    #[test]
    fn too_few_scans_is_a_generator_error() {
        assert!(matches!(generate_dataset(&small([1, 1, 1])), Err(Error::Generator(_))));
    }

    #[test]
    fn split_sizes_and_purity() {
        let data: Vec<ScanSample> = (0..10)
            .map(|subject_id| ScanSample {
                image: Image::zeros(2, 2),
                severity: 0,
                axis: 0,
                subject_id,
                artifact: ArtifactType::Noise,
            })
            .collect();
        let split = split_by_subject(&data, 0.8, 3).unwrap();
        assert_eq!((split.train_subjects.len(), split.val_subjects.len()), (8, 2));
        assert!(split.train_subjects.iter().all(|s| !split.val_subjects.contains(s)));
        assert_eq!(split, split_by_subject(&data, 0.8, 3).unwrap());
        assert!(matches!(split_by_subject(&data[..1], 0.8, 3), Err(Error::Split(_))));
    }
}
