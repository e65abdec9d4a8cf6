//! One training run per configuration cell, sharing seed and data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_on, PairSet, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{UNetConfig, UpsampleMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Scores of the best-validation checkpoint.
    pub val_ssim: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const HEADER: &'static str = "variant,val_ssim,val_loss";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.variant, r.val_ssim, r.val_loss));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn run_cells(cells: Vec<(String, UNetConfig)>, cfg: &TrainConfig, train: &PairSet, val: &PairSet) -> Result<AblationTable> {
    let mut cfg = cfg.clone();
    cfg.out_dir = None;
    cfg.resume = None;
    let mut rows = Vec::with_capacity(cells.len());
    for (variant, unet) in cells {
        let outcome = train_on(&unet, &cfg, train, val)?;
        rows.push(AblationRow {
            variant,
            val_ssim: outcome.best.index.val_ssim,
            val_loss: outcome.best.index.val_loss,
        });
    }
    Ok(AblationTable { rows })
}

pub fn ablate_depth(base: &UNetConfig, cfg: &TrainConfig, depths: &[usize], train: &PairSet, val: &PairSet) -> Result<AblationTable> {
    let cells = depths
        .iter()
        .map(|&depth| (format!("{depth} units"), UNetConfig { depth, ..*base }))
        .collect();
    run_cells(cells, cfg, train, val)
}

pub fn ablate_upsample(base: &UNetConfig, cfg: &TrainConfig, modes: &[UpsampleMode], train: &PairSet, val: &PairSet) -> Result<AblationTable> {
    let cells = modes
        .iter()
        .map(|&upsample| (upsample.name().to_string(), UNetConfig { upsample, ..*base }))
        .collect();
    run_cells(cells, cfg, train, val)
}
