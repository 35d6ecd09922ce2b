//! Training and validation image pipelines: per-image standardization,
//! center crop, optional random rotation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::synth::image::Image;

pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const DEFAULT_CROP: usize = 28;

/// Zero mean, unit variance. A constant image maps to all zeros.
pub fn normalize(image: &Image) -> Image {
    let first = image.data[0];
    if image.data.iter().all(|&v| v == first) {
        return Image::zeros(image.height, image.width);
    }
    let mean = image.mean();
    let std = image.variance().max(VARIANCE_FLOOR).sqrt();
    Image {
        height: image.height,
        width: image.width,
        data: image.data.iter().map(|v| (v - mean) / std).collect(),
    }
}

pub fn center_crop(image: &Image, height: usize, width: usize) -> Result<Image> {
    if height > image.height || width > image.width {
        return Err(Error::Argument(format!(
            "crop {height}x{width} larger than image {}x{}",
            image.height, image.width
        )));
    }
    let top = (image.height - height) / 2;
    let left = (image.width - width) / 2;
    let mut data = Vec::with_capacity(height * width);
    for y in top..top + height {
        data.extend_from_slice(&image.data[y * image.width + left..][..width]);
    }
    Image::new(height, width, data)
}

/// Rotates counter-clockwise by `degrees` about the image center with
/// nearest-neighbour sampling and zero fill.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (image.height as f64 - 1.0) / 2.0;
    let cx = (image.width as f64 - 1.0) / 2.0;
    let mut out = Image::zeros(image.height, image.width);
    for y in 0..image.height {
        for x in 0..image.width {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // inverse map: rotate the output coordinate by -θ
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if let Some(v) = image.get_signed(sy.round() as isize, sx.round() as isize) {
                out.data[y * image.width + x] = v;
            }
        }
    }
    out
}

/// Rotation angle drawn for augmentation key `seed`, uniform in [-180°, 180°].
pub fn rotation_angle(seed: u64) -> f64 {
    rng::stream(seed, "rotation", &[]).random_range(-180.0..=180.0)
}

/// Standardize, center-crop to `crop x crop`, then rotate by a seeded angle
/// when `rotation` is enabled.
pub fn augment_with_crop(image: &Image, rotation: bool, seed: u64, crop: usize) -> Result<Image> {
    let cropped = center_crop(&normalize(image), crop, crop)?;
    Ok(if rotation {
        rotate(&cropped, rotation_angle(seed))
    } else {
        cropped
    })
}

pub fn augment(image: &Image, rotation: bool, seed: u64) -> Result<Image> {
    augment_with_crop(image, rotation, seed, DEFAULT_CROP)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured() -> Image {
        let data = (0..32 * 32)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 + (i % 32) as f64 * 0.1)
            .collect();
        Image::new(32, 32, data).unwrap()
    }

    #[test]
    fn normalization_statistics() {
        let n = normalize(&textured());
        assert!(n.mean().abs() < 1e-6);
        assert!((n.variance() - 1.0).abs() < 1e-6);
        let flat = normalize(&Image::new(4, 4, vec![3.3; 16]).unwrap());
        assert!(flat.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_rotation_matches_disabled_path() {
        let img = textured();
        let plain = augment(&img, false, 5).unwrap();
        let cropped = center_crop(&normalize(&img), 28, 28).unwrap();
        assert_eq!(plain, cropped);
        assert_eq!(rotate(&cropped, 0.0), cropped);
        assert_eq!(plain.height, 28);
    }

    #[test]
    fn right_angle_rotations_invert_in_the_interior() {
        let img = center_crop(&normalize(&textured()), 28, 28).unwrap();
        for theta in [90.0, 180.0] {
            let back = rotate(&rotate(&img, theta), -theta);
            for y in 5..23 {
                for x in 5..23 {
                    assert_eq!(back.get(y, x), img.get(y, x));
                }
            }
        }
    }

    #[test]
    fn oversized_crop_is_rejected() {
        assert!(center_crop(&textured(), 40, 28).is_err());
    }

    #[test]
    fn rotation_angle_in_range_and_deterministic() {
        for s in 0..200 {
            let a = rotation_angle(s);
            assert!((-180.0..=180.0).contains(&a));
            assert_eq!(a, rotation_angle(s));
        }
    }
}
