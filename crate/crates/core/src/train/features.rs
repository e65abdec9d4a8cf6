//! Per-channel images of every encoder and decoder unit output.

use std::path::Path;

use serde::Serialize;

use super::Checkpoint;
use crate::error::{invalid, Result};
use crate::image::{Image, Tensor};
use crate::io::{create_dir, save_pgm};
use crate::nn::{unet_forward, Mode};
use crate::prng::Prng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureUnit {
    /// `enc{d}` or `dec{d}`.
    pub unit: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Min-max normalizes one channel plane; constant planes become mid-gray.
fn normalize(plane: &[f64]) -> Vec<f64> {
    let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return vec![0.5; plane.len()];
    }
    plane.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn write_unit(t: &Tensor, unit: String, out_dir: &Path) -> Result<FeatureUnit> {
    let [_, c, h, w] = t.dims4()?;
    let dir = out_dir.join(&unit);
    create_dir(&dir)?;
    let sample = t.sample(0);
    for k in 0..c {
        let img = Image::gray(h, w, normalize(&sample[k * h * w..(k + 1) * h * w]))?;
        save_pgm(&img, dir.join(format!("c{k:03}.pgm")))?;
    }
    Ok(FeatureUnit {
        unit,
        channels: c,
        height: h,
        width: w,
    })
}

/// Writes `out_dir/enc{d}/cNNN.pgm` (pooled encoder outputs) and
/// `out_dir/dec{d}/cNNN.pgm` (decoder block outputs) for one image.
pub fn export_feature_maps(ckpt: &Checkpoint, img: &Image, out_dir: impl AsRef<Path>) -> Result<Vec<FeatureUnit>> {
    let unet = ckpt.unet();
    if img.channels() != unet.in_channels {
        return Err(invalid!("image has {} channels, network expects {}", img.channels(), unet.in_channels));
    }
    let (_, cache) = unet_forward(unet, &ckpt.params, &img.to_tensor(), Mode::Infer, &mut Prng::new(0))?;
    let out_dir = out_dir.as_ref();
    create_dir(out_dir)?;
    let mut units = Vec::new();
    for (d, enc) in cache.encoders.iter().enumerate() {
        units.push(write_unit(&enc.output, format!("enc{d}"), out_dir)?);
    }
    for (d, dec) in cache.decoders.iter().enumerate().rev() {
        units.push(write_unit(&dec.block.output, format!("dec{d}"), out_dir)?);
    }
    Ok(units)
}
