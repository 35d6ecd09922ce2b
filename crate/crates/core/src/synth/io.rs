//! On-disk dataset layout: `manifest.json` plus `images.f32`, a raw
//! little-endian `f32` blob with images concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::artifacts::ArtifactType;
use crate::synth::image::Image;
use crate::synth::{DatasetSpec, ScanSample};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.f32";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub index: usize,
    pub subject_id: usize,
    pub axis: usize,
    pub severity: usize,
    pub artifact_type: ArtifactType,
    /// Byte offset of the image in the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub spec: DatasetSpec,
    pub height: usize,
    pub width: usize,
    pub records: Vec<Record>,
}

pub fn write_dataset(dir: &Path, spec: &DatasetSpec, samples: &[ScanSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (height, width) = (spec.size, spec.size);
    let image_bytes = (height * width * 4) as u64;
    let mut blob = Vec::with_capacity(samples.len() * image_bytes as usize);
    let mut records = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        if s.image.height != height || s.image.width != width {
            return Err(Error::Format(format!(
                "sample {index} is {}x{}, spec says {height}x{width}",
                s.image.height, s.image.width
            )));
        }
        records.push(Record {
            index,
            subject_id: s.subject_id,
            axis: s.axis,
            severity: s.severity,
            artifact_type: s.artifact,
            offset: index as u64 * image_bytes,
        });
        for &v in &s.image.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        spec: spec.clone(),
        height,
        width,
        records,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(IMAGES_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetSpec, Vec<ScanSample>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            manifest.version
        )));
    }
    let blob_path = dir.join(IMAGES_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let plane = manifest.height * manifest.width;
    let expected = manifest.records.len() * plane * 4;
    if blob.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {} images x {}x{} x 4 = {expected}",
            blob_path.display(),
            blob.len(),
            manifest.records.len(),
            manifest.height,
            manifest.width
        )));
    }
    let samples = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let start = (i * plane * 4) as u64;
            if r.index != i || r.offset != start {
                return Err(Error::Format(format!(
                    "record {i} has index {} and offset {}, expected {i} and {start}",
                    r.index, r.offset
                )));
            }
            if r.severity > 2 || r.axis > 2 {
                return Err(Error::Format(format!("record {i} has labels out of range")));
            }
            let data = blob[start as usize..][..plane * 4]
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            Ok(ScanSample {
                image: Image::new(manifest.height, manifest.width, data)?,
                severity: r.severity,
                axis: r.axis,
                subject_id: r.subject_id,
                artifact: r.artifact_type,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest.spec, samples))
}
