//! Wavelet-Fourier stripe suppression.
//!
//! The polar grid is decomposed with a multilevel Haar transform. A vertical
//! stripe is constant down the rows, so in each vertical-detail subband its
//! energy sits at the lowest frequencies of a row-axis FFT. Those frequencies
//! are damped by `1 - exp(-u^2 / (2 sigma^2))` before reconstruction.

use super::spectral::filter_columns;
use super::wavelet::{haar_decompose, haar_reconstruct};
use crate::error::{invalid, Result};
use crate::image::clamp01;
use crate::polar::PolarImage;

pub fn stripe_damping(u: usize, sigma: f64) -> f64 {
    let u = u as f64;
    1.0 - (-u * u / (2.0 * sigma * sigma)).exp()
}

/// Largest level count a `rows x cols` grid admits.
pub fn max_levels(rows: usize, cols: usize) -> usize {
    (rows.min(cols) as f64).log2().floor() as usize
}

/// Filters a row-major grid without clamping. Dimensions that are not
/// multiples of `2^levels` are padded by edge replication and cropped after.
pub fn stripe_filter_grid(data: &[f64], rows: usize, cols: usize, levels: usize, sigma: f64) -> Result<Vec<f64>> {
    if levels == 0 || levels > max_levels(rows, cols) {
        return Err(invalid!(
            "stripe filter levels {levels} outside 1..={} for a {rows}x{cols} grid",
            max_levels(rows, cols)
        ));
    }
    if !(sigma > 0.0) {
        return Err(invalid!("stripe filter sigma must be positive, got {sigma}"));
    }
    let block = 1usize << levels;
    let pr = rows.div_ceil(block) * block;
    let pc = cols.div_ceil(block) * block;
    let mut padded = vec![0.0; pr * pc];
    for r in 0..pr {
        let sr = r.min(rows - 1);
        for c in 0..pc {
            padded[r * pc + c] = data[sr * cols + c.min(cols - 1)];
        }
    }

    let (approx, mut details) = haar_decompose(&padded, pr, pc, levels)?;
    for level in &mut details {
        filter_columns(&mut level.vertical, level.rows, level.cols, |u| stripe_damping(u, sigma));
    }
    let full = haar_reconstruct(&approx, &details);

    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        out.extend_from_slice(&full[r * pc..r * pc + cols]);
    }
    Ok(out)
}

pub fn stripe_filter(p: &PolarImage, levels: usize, sigma: f64) -> Result<PolarImage> {
    let out = stripe_filter_grid(p.data(), p.n_theta(), p.n_r(), levels, sigma)?;
    p.with_data(out.into_iter().map(clamp01).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    fn column_mean_variance(data: &[f64], rows: usize, cols: usize) -> f64 {
        let means: Vec<f64> = (0..cols)
            .map(|c| (0..rows).map(|r| data[r * cols + c]).sum::<f64>() / rows as f64)
            .collect();
        let m = means.iter().sum::<f64>() / cols as f64;
        means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cols as f64
    }

    #[test]
    fn constant_grid_is_unchanged() {
        let p = PolarImage::new(64, 32, 10.0, (10.0, 10.0), vec![0.6; 64 * 32]).unwrap();
        let out = stripe_filter(&p, 3, 2.0).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-6));
    }

    #[test]
    fn vertical_stripes_are_removed() {
        let (rows, cols) = (128, 64);
        let mut g = Prng::new(4);
        let offsets: Vec<f64> = (0..cols).map(|_| 0.1 * (g.next_f64() - 0.5)).collect();
        let artifact: Vec<f64> = (0..rows * cols).map(|k| offsets[k % cols]).collect();
        let before = column_mean_variance(&artifact, rows, cols);
        for levels in [4, 5] {
            let out = stripe_filter_grid(&artifact, rows, cols, levels, 2.0).unwrap();
            let after = column_mean_variance(&out, rows, cols);
            assert!(after <= 0.1 * before, "levels {levels}: {after} vs {before}");
        }
        // three levels keep the 8-column block averages, roughly 1/8 of the energy
        let out = stripe_filter_grid(&artifact, rows, cols, 3, 2.0).unwrap();
        assert!(column_mean_variance(&out, rows, cols) <= 0.25 * before);
    }

    #[test]
    fn horizontal_stripes_pass() {
        let (rows, cols) = (128, 64);
        let mut g = Prng::new(8);
        let offsets: Vec<f64> = (0..rows).map(|_| 0.4 + 0.2 * g.next_f64()).collect();
        let data: Vec<f64> = (0..rows * cols).map(|k| offsets[k / cols]).collect();
        let out = stripe_filter_grid(&data, rows, cols, 3, 2.0).unwrap();
        for (a, b) in data.iter().zip(&out) {
            assert!((a - b).abs() <= 0.05 * a.abs());
        }
    }

    #[test]
    fn padding_handles_odd_sizes() {
        let data: Vec<f64> = (0..30 * 21).map(|k| 0.5 + 0.1 * ((k % 7) as f64 / 7.0)).collect();
        let out = stripe_filter_grid(&data, 30, 21, 2, 2.0).unwrap();
        assert_eq!(out.len(), data.len());
        assert!(stripe_filter_grid(&data, 30, 21, 5, 2.0).is_err());
        assert!(stripe_filter_grid(&data, 30, 21, 0, 2.0).is_err());
    }

    #[test]
    fn damping_curve() {
        assert_eq!(stripe_damping(0, 2.0), 0.0);
        assert!((stripe_damping(2, 2.0) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!(stripe_damping(20, 2.0) > 0.999_999);
    }
}
