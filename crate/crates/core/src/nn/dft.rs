//! Direct separable 2-D discrete Fourier transform.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Twiddle table `exp(-2πi·k/n)` for `k in 0..n`.
fn twiddles(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let theta = -2.0 * PI * k as f64 / n as f64;
            (theta.cos(), theta.sin())
        })
        .collect()
}

/// 1-D DFT of `n` complex values read with `stride` starting at `offset`,
/// written back in place.
fn dft_1d(re: &mut [f64], im: &mut [f64], offset: usize, stride: usize, n: usize, table: &[(f64, f64)]) {
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for (k, (ore, oim)) in out_re.iter_mut().zip(out_im.iter_mut()).enumerate() {
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for j in 0..n {
            let (c, s) = table[(k * j) % n];
            let xr = re[offset + j * stride];
            let xi = im[offset + j * stride];
            acc_re += xr * c - xi * s;
            acc_im += xr * s + xi * c;
        }
        *ore = acc_re;
        *oim = acc_im;
    }
    for j in 0..n {
        re[offset + j * stride] = out_re[j];
        im[offset + j * stride] = out_im[j];
    }
}

/// Complex spectrum `(re, im)` of a real `height x width` image, unshifted
/// (DC at index 0).
pub fn dft2(image: &[f64], height: usize, width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if image.len() != height * width {
        return Err(Error::Argument(format!(
            "image has {} values, expected {height}x{width}",
            image.len()
        )));
    }
    if !image.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericFault { layer: "dft".into() });
    }
    let mut re = image.to_vec();
    let mut im = vec![0.0; image.len()];
    let row_table = twiddles(width);
    for y in 0..height {
        dft_1d(&mut re, &mut im, y * width, 1, width, &row_table);
    }
    let col_table = twiddles(height);
    for x in 0..width {
        dft_1d(&mut re, &mut im, x, width, height, &col_table);
    }
    Ok((re, im))
}

/// Magnitude spectrum `|F(u, v)|`.
pub fn dft_magnitude(image: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
    let (re, im) = dft2(image, height, width)?;
    Ok(re.iter().zip(&im).map(|(r, i)| r.hypot(*i)).collect())
}

/// Log-magnitude spectrum `ln(1 + |F(u, v)|)`, DC at `(0, 0)`.
pub fn dft_features(image: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
    Ok(dft_magnitude(image, height, width)?
        .into_iter()
        .map(f64::ln_1p)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_dc_only() {
        let n = 8;
        let c = 0.75;
        let mag = dft_magnitude(&vec![c; n * n], n, n).unwrap();
        assert!((mag[0] - c * (n * n) as f64).abs() < 1e-12);
        assert!(mag[1..].iter().all(|&m| m < 1e-12));
    }

    #[test]
    fn sinusoid_has_two_bins() {
        let (h, w, k) = (8usize, 8usize, 3usize);
        let image: Vec<f64> = (0..h * w)
            .map(|i| (2.0 * PI * (k * (i % w)) as f64 / w as f64).cos())
            .collect();
        let mag = dft_magnitude(&image, h, w).unwrap();
        for (i, &m) in mag.iter().enumerate() {
            let (u, v) = (i / w, i % w);
            if u == 0 && (v == k || v == w - k) {
                assert!((m - (h * w) as f64 / 2.0).abs() < 1e-9);
            } else {
                assert!(m < 1e-9, "bin ({u},{v}) = {m}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_size() {
        assert!(dft_features(&[1.0, f64::INFINITY, 0.0, 0.0], 2, 2).is_err());
        assert!(dft_features(&[1.0; 5], 2, 2).is_err());
    }
}
