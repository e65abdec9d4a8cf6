//! SSIM and MSE.
//!
//! `ssim_global` evaluates the structural-similarity formula once over the
//! whole image with population statistics. `ssim_windowed` averages the same
//! formula over every fully interior square patch. Reports always name the
//! variant they used.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::image::Image;
use crate::io::{load_pgm, write_json};
use crate::par;
use crate::synth::DatasetManifest;

/// `(0.01 L)^2` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
/// `(0.03 L)^2` with dynamic range `L = 1`.
pub const SSIM_C2: f64 = 9e-4;
pub const DEFAULT_WINDOW: usize = 7;

fn check_pair(x: &Image, y: &Image) -> Result<()> {
    if !x.same_dims(y) {
        return Err(shape_err!(
            "images differ in size: {}x{}x{} vs {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            y.height(),
            y.width(),
            y.channels()
        ));
    }
    Ok(())
}

/// The SSIM formula from population moments of two equally sized samples.
fn ssim_from_samples<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)> + Clone, c1: f64, c2: f64) -> f64 {
    let mut n = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (a, b) in pairs.clone() {
        sx += a;
        sy += b;
        n += 1;
    }
    let nf = n as f64;
    let (mx, my) = (sx / nf, sy / nf);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    let (vx, vy, cxy) = (vx / nf, vy / nf, cxy / nf);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn ssim_global(x: &Image, y: &Image) -> Result<f64> {
    ssim_global_with(x, y, SSIM_C1, SSIM_C2)
}

pub fn ssim_global_with(x: &Image, y: &Image, c1: f64, c2: f64) -> Result<f64> {
    check_pair(x, y)?;
    x.require_gray()?;
    if x == y {
        return Ok(1.0);
    }
    Ok(ssim_from_samples(x.data().iter().zip(y.data()), c1, c2))
}

pub fn ssim_windowed(x: &Image, y: &Image, window: usize) -> Result<f64> {
    ssim_windowed_with(x, y, window, SSIM_C1, SSIM_C2)
}

pub fn ssim_windowed_with(x: &Image, y: &Image, window: usize, c1: f64, c2: f64) -> Result<f64> {
    check_pair(x, y)?;
    x.require_gray()?;
    let (h, w) = (x.height(), x.width());
    if window == 0 || window % 2 == 0 {
        return Err(invalid!("SSIM window must be odd, got {window}"));
    }
    if window > h.min(w) {
        return Err(invalid!("SSIM window {window} exceeds image {h}x{w}"));
    }
    let rows = h - window + 1;
    let cols = w - window + 1;
    let per_row = par::map_range(rows, |r0| {
        let mut acc = 0.0;
        let mut px = Vec::with_capacity(window * window);
        let mut py = Vec::with_capacity(window * window);
        for c0 in 0..cols {
            px.clear();
            py.clear();
            for r in r0..r0 + window {
                px.extend_from_slice(&x.data()[r * w + c0..r * w + c0 + window]);
                py.extend_from_slice(&y.data()[r * w + c0..r * w + c0 + window]);
            }
            acc += if px == py {
                1.0
            } else {
                ssim_from_samples(px.iter().zip(&py), c1, c2)
            };
        }
        acc
    });
    Ok(per_row.iter().sum::<f64>() / (rows * cols) as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (q - p) * (q - p)).sum();
    Ok(sum / a.data().len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub input: String,
    pub ssim: f64,
    pub mse: f64,
    pub ssim_windowed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-pair and aggregate scores of one correction method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Which SSIM fills `ssim`/`mean_ssim`; the windowed score is carried alongside.
    pub ssim_variant: String,
    pub ssim_window: usize,
    pub manifest: String,
    pub pairs: Vec<PairScore>,
    pub mean_ssim: f64,
    pub mean_mse: f64,
    pub std_ssim: f64,
    pub std_mse: f64,
    pub mean_ssim_windowed: f64,
    pub ssim_summary: Summary,
    pub mse_summary: Summary,
}

impl EvalReport {
    pub fn from_scores(method: &str, manifest: &str, pairs: Vec<PairScore>) -> EvalReport {
        let ssim: Vec<f64> = pairs.iter().map(|p| p.ssim).collect();
        let mse: Vec<f64> = pairs.iter().map(|p| p.mse).collect();
        let win: Vec<f64> = pairs.iter().map(|p| p.ssim_windowed).collect();
        let (s, m) = (Summary::of(&ssim), Summary::of(&mse));
        EvalReport {
            method: method.to_string(),
            ssim_variant: "global".into(),
            ssim_window: DEFAULT_WINDOW,
            manifest: manifest.to_string(),
            pairs,
            mean_ssim: s.mean,
            mean_mse: m.mean,
            std_ssim: s.std,
            std_mse: m.std,
            mean_ssim_windowed: Summary::of(&win).mean,
            ssim_summary: s,
            mse_summary: m,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

/// The default window, shrunk to the largest odd size the image admits.
fn fitted_window(img: &Image) -> usize {
    let m = img.height().min(img.width());
    DEFAULT_WINDOW.min(if m % 2 == 0 { m - 1 } else { m })
}

pub fn score_pair(input: &str, output: &Image, target: &Image) -> Result<PairScore> {
    Ok(PairScore {
        input: input.to_string(),
        ssim: ssim_global(output, target)?,
        mse: mse(output, target)?,
        ssim_windowed: ssim_windowed(output, target, fitted_window(target))?,
    })
}

/// Scores `outputs_dir/<input file name>` against each pair's target.
pub fn evaluate_pairs(manifest: &DatasetManifest, outputs_dir: impl AsRef<Path>, method_label: &str) -> Result<EvalReport> {
    let outputs_dir = outputs_dir.as_ref();
    let scores = par::map_slice(&manifest.pairs, |pair| {
        let name = Path::new(&pair.input)
            .file_name()
            .ok_or_else(|| invalid!("pair input {:?} has no file name", pair.input))?;
        let output = load_pgm(outputs_dir.join(name))?;
        let target = load_pgm(manifest.target_path(pair))?;
        score_pair(&pair.input, &output, &target)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let label = manifest.root().join(DatasetManifest::FILE_NAME);
    Ok(EvalReport::from_scores(method_label, &label.to_string_lossy(), scores))
}
