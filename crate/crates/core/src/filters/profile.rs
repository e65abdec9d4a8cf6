//! Ring removal through the radial profile.
//!
//! A ring adds a per-radius offset, so in the polar grid it shifts one
//! column's mean. The profile (column means) is smoothed with a low-pass
//! filter; the difference between the raw and smoothed profile is the ring
//! estimate and is subtracted from every row.

use serde::{Deserialize, Serialize};

use super::spectral::filter_real;
use crate::error::{invalid, Result};
use crate::image::clamp01;
use crate::polar::PolarImage;

/// Column means of the polar grid.
pub fn radial_profile(p: &PolarImage) -> Vec<f64> {
    let (rows, cols) = (p.n_theta(), p.n_r());
    let mut acc = vec![0.0; cols];
    for row in p.data().chunks_exact(cols) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows as f64).collect()
}

fn check_len(a: &[f64]) -> Result<()> {
    if a.len() < 4 {
        return Err(invalid!("profile of length {} is too short (need >= 4)", a.len()));
    }
    Ok(())
}

/// Ideal low-pass: zeroes bins with symmetric index above `cutoff_frac * n`.
pub fn smooth_profile_fft(a: &[f64], cutoff_frac: f64) -> Result<Vec<f64>> {
    check_len(a)?;
    if !(cutoff_frac > 0.0 && cutoff_frac <= 0.5) {
        return Err(invalid!("cutoff_frac {cutoff_frac} outside (0, 0.5]"));
    }
    let keep = cutoff_frac * a.len() as f64;
    Ok(filter_real(a, |u| if u == 0 || u as f64 <= keep { 1.0 } else { 0.0 }))
}

/// `1 / (1 + (k / d0)^(2 order))`.
pub fn butterworth_gain(k: f64, d0: f64, order: u32) -> f64 {
    1.0 / (1.0 + (k / d0).powi(2 * order as i32))
}

pub fn smooth_profile_butterworth(a: &[f64], d0: f64, order: u32) -> Result<Vec<f64>> {
    check_len(a)?;
    if !(d0 > 0.0) || order == 0 {
        return Err(invalid!("butterworth needs d0 > 0 and order >= 1, got d0={d0}, order={order}"));
    }
    Ok(filter_real(a, |u| butterworth_gain(u as f64, d0, order)))
}

/// Low-pass filter used to estimate the ring-free profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileSmoother {
    Fft { cutoff_frac: f64 },
    Butterworth { d0: f64, order: u32 },
}

impl ProfileSmoother {
    pub fn smooth(&self, a: &[f64]) -> Result<Vec<f64>> {
        match *self {
            ProfileSmoother::Fft { cutoff_frac } => smooth_profile_fft(a, cutoff_frac),
            ProfileSmoother::Butterworth { d0, order } => smooth_profile_butterworth(a, d0, order),
        }
    }

    /// Smooths the half-sample mirror extension `a ++ reverse(a)` and keeps the
    /// first half. The extension is continuous across the wrap, so the
    /// center/rim jump of the profile does not ring through the estimate.
    /// Cutoffs are rescaled so the pass band is unchanged in cycles per sample.
    pub fn smooth_reflected(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_len(a)?;
        let ext: Vec<f64> = a.iter().chain(a.iter().rev()).copied().collect();
        let doubled = match *self {
            ProfileSmoother::Fft { .. } => *self,
            ProfileSmoother::Butterworth { d0, order } => ProfileSmoother::Butterworth { d0: 2.0 * d0, order },
        };
        let mut s = doubled.smooth(&ext)?;
        s.truncate(a.len());
        Ok(s)
    }
}

/// Per-column ring estimate `a - smooth(a)`.
pub fn ring_estimate(p: &PolarImage, smoother: &ProfileSmoother) -> Result<Vec<f64>> {
    let a = radial_profile(p);
    let s = smoother.smooth_reflected(&a)?;
    Ok(a.iter().zip(&s).map(|(x, y)| x - y).collect())
}

fn subtract_columns(p: &PolarImage, e: &[f64], clamp: bool) -> Result<PolarImage> {
    let cols = p.n_r();
    let data = p
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let out = v - e[k % cols];
            if clamp {
                clamp01(out)
            } else {
                out
            }
        })
        .collect();
    p.with_data(data)
}

pub fn remove_rings_by_profile(p: &PolarImage, smoother: &ProfileSmoother) -> Result<PolarImage> {
    let e = ring_estimate(p, smoother)?;
    subtract_columns(p, &e, true)
}
