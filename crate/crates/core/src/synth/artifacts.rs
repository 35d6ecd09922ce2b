//! Toy 2-D corruptions graded by severity. Severity 0 is the identity.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::synth::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactType {
    Noise,
    Zipper,
    Positioning,
    Banding,
    Motion,
    Contrast,
    Distortion,
}

impl ArtifactType {
    pub const ALL: [ArtifactType; 7] = [
        ArtifactType::Noise,
        ArtifactType::Zipper,
        ArtifactType::Positioning,
        ArtifactType::Banding,
        ArtifactType::Motion,
        ArtifactType::Contrast,
        ArtifactType::Distortion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactType::Noise => "noise",
            ArtifactType::Zipper => "zipper",
            ArtifactType::Positioning => "positioning",
            ArtifactType::Banding => "banding",
            ArtifactType::Motion => "motion",
            ArtifactType::Contrast => "contrast",
            ArtifactType::Distortion => "distortion",
        }
    }

    /// Class counts (none, moderate, severe) of the original challenge data
    /// for this artifact, before simulation.
    pub fn default_counts(self) -> [usize; 3] {
        match self {
            ArtifactType::Noise => [426, 60, 46],
            ArtifactType::Zipper => [398, 105, 29],
            ArtifactType::Positioning => [470, 47, 15],
            ArtifactType::Banding => [504, 15, 13],
            ArtifactType::Motion => [384, 78, 70],
            ArtifactType::Contrast => [375, 134, 23],
            ArtifactType::Distortion => [435, 56, 41],
        }
    }
}

impl std::str::FromStr for ArtifactType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactType::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown artifact type {s:?}")))
    }
}

impl std::fmt::Display for ArtifactType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const NOISE_SIGMA: [f64; 3] = [0.0, 0.15, 0.40];
pub const ZIPPER_AMPLITUDE: [f64; 3] = [0.0, 0.5, 1.0];
pub const ZIPPER_PERIOD: usize = 8;
pub const BANDING_AMPLITUDE: [f64; 3] = [0.0, 0.3, 0.7];
pub const BANDING_PERIOD: f64 = 6.0;
pub const CONTRAST_FACTOR: [f64; 3] = [1.0, 0.6, 0.3];
pub const MOTION_SHIFT: [isize; 3] = [0, 2, 5];
pub const POSITIONING_SHIFT: [isize; 3] = [0, 3, 7];
pub const DISTORTION_AMPLITUDE: [f64; 3] = [0.0, 1.5, 4.0];
pub const DISTORTION_PERIOD: f64 = 12.0;

/// Applies `artifact` at `severity` using randomness keyed by `seed`.
pub fn apply_artifact(image: &Image, artifact: ArtifactType, severity: usize, seed: u64) -> Result<Image> {
    if severity > 2 {
        return Err(Error::Argument(format!("severity {severity} outside 0..=2")));
    }
    if severity == 0 {
        return Ok(image.clone());
    }
    let mut stream = rng::stream(seed, "artifact", &[]);
    let (h, w) = (image.height, image.width);
    let mut out = image.clone();
    match artifact {
        ArtifactType::Noise => {
            let normal = Normal::new(0.0, NOISE_SIGMA[severity]).expect("positive sigma");
            for v in &mut out.data {
                *v += normal.sample(&mut stream);
            }
        }
        ArtifactType::Zipper => {
            let amp = ZIPPER_AMPLITUDE[severity];
            let offset = stream.random_range(0..ZIPPER_PERIOD);
            for y in (offset..h).step_by(ZIPPER_PERIOD) {
                for x in 0..w {
                    out.data[y * w + x] = if x % 2 == 0 { amp } else { -amp };
                }
            }
        }
        ArtifactType::Banding => {
            let amp = BANDING_AMPLITUDE[severity];
            let phase = stream.random_range(0.0..2.0 * PI);
            for y in 0..h {
                let band = amp * (2.0 * PI * y as f64 / BANDING_PERIOD + phase).sin();
                for v in &mut out.data[y * w..(y + 1) * w] {
                    *v += band;
                }
            }
        }
        ArtifactType::Contrast => {
            let f = CONTRAST_FACTOR[severity];
            let mean = image.mean();
            for v in &mut out.data {
                *v = mean + f * (*v - mean);
            }
        }
        ArtifactType::Motion => {
            let d = MOTION_SHIFT[severity];
            for y in 0..h {
                for x in 0..w {
                    let (yi, xi) = (y as isize, x as isize);
                    out.data[y * w + x] = (image.get(y, x)
                        + image.get_clamped(yi, xi - d)
                        + image.get_clamped(yi, xi + d))
                        / 3.0;
                }
            }
        }
        ArtifactType::Positioning => {
            let d = POSITIONING_SHIFT[severity];
            let sy = if stream.random_bool(0.5) { d } else { -d };
            let sx = if stream.random_bool(0.5) { d } else { -d };
            for y in 0..h {
                for x in 0..w {
                    out.data[y * w + x] = image.get_signed(y as isize - sy, x as isize - sx).unwrap_or(0.0);
                }
            }
        }
        ArtifactType::Distortion => {
            let amp = DISTORTION_AMPLITUDE[severity];
            let (px, py) = (stream.random_range(0.0..2.0 * PI), stream.random_range(0.0..2.0 * PI));
            for y in 0..h {
                for x in 0..w {
                    let dx = amp * (2.0 * PI * y as f64 / DISTORTION_PERIOD + px).sin();
                    let dy = amp * (2.0 * PI * x as f64 / DISTORTION_PERIOD + py).sin();
                    let sx = (x as f64 + dx).round() as isize;
                    let sy = (y as f64 + dy).round() as isize;
                    out.data[y * w + x] = image.get_clamped(sy, sx);
                }
            }
        }
    }
    Ok(out)
}
