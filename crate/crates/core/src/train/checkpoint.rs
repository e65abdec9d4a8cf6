//! On-disk model snapshots: a JSON index plus one tensor file per array.
//!
//! ```text
//! <dir>/checkpoint.json
//! <dir>/tensors/<name>.rft        parameter values
//! <dir>/tensors/<name>.m.rft      Adam first moment (trainable tensors)
//! <dir>/tensors/<name>.v.rft      Adam second moment
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::TrainConfig;
use crate::error::{invalid, shape_err, Result};
use crate::image::Tensor;
use crate::io::{create_dir, load_tensor, read_json, save_tensor, write_json};
use crate::nn::{build_store, ParamKind, ParameterStore, UNetConfig};

pub const INDEX_FILE: &str = "checkpoint.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

/// Everything needed to run inference or to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format_version: u32,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    /// Training PRNG state at the end of `epoch`.
    pub rng_state: u64,
    pub val_ssim: f64,
    pub val_loss: f64,
    pub best_val_ssim: f64,
    pub adam: AdamConfig,
    pub adam_t: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub index: CheckpointIndex,
    pub params: ParameterStore,
    pub adam: AdamState,
}

fn tensor_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join("tensors").join(format!("{name}{suffix}.rft"))
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir.join("tensors"))?;
        for (i, p) in self.params.params().iter().enumerate() {
            save_tensor(&p.value, tensor_path(dir, &p.name, ""))?;
            if p.kind.trainable() {
                save_tensor(&self.adam.m[i], tensor_path(dir, &p.name, ".m"))?;
                save_tensor(&self.adam.v[i], tensor_path(dir, &p.name, ".v"))?;
            }
        }
        write_json(&self.index, dir.join(INDEX_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
        let dir = dir.as_ref();
        let index: CheckpointIndex = read_json(dir.join(INDEX_FILE))?;
        if index.format_version != FORMAT_VERSION {
            return Err(invalid!("unsupported checkpoint format version {}", index.format_version));
        }
        let mut params = build_store(&index.unet)?;
        if params.len() != index.tensors.len() {
            return Err(shape_err!(
                "checkpoint lists {} tensors, configuration needs {}",
                index.tensors.len(),
                params.len()
            ));
        }
        let mut adam = AdamState::new(&params, index.adam);
        adam.t = index.adam_t;
        for (i, entry) in index.tensors.iter().enumerate() {
            let expected = &params.params()[i];
            if expected.name != entry.name || expected.kind != entry.kind {
                return Err(invalid!("checkpoint tensor {i} is {}, expected {}", entry.name, expected.name));
            }
            let value = load_tensor(tensor_path(dir, &entry.name, ""))?;
            params.set(&entry.name, value)?;
            if entry.kind.trainable() {
                let load = |suffix: &str, like: &Tensor| -> Result<Tensor> {
                    let t = load_tensor(tensor_path(dir, &entry.name, suffix))?;
                    if t.shape() != like.shape() {
                        return Err(shape_err!("moment {}{suffix} has shape {:?}", entry.name, t.shape()));
                    }
                    Ok(t)
                };
                adam.m[i] = load(".m", &adam.m[i])?;
                adam.v[i] = load(".v", &adam.v[i])?;
            }
        }
        Ok(Checkpoint { index, params, adam })
    }

    pub fn unet(&self) -> &UNetConfig {
        &self.index.unet
    }
}

pub(crate) fn tensor_entries(params: &ParameterStore) -> Vec<TensorEntry> {
    params
        .params()
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            kind: p.kind,
            shape: p.value.shape().to_vec(),
        })
        .collect()
}

pub(crate) const CHECKPOINT_FORMAT: u32 = FORMAT_VERSION;
