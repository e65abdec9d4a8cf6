//! Optimization, inference, ablations and feature-map export.

mod adam;
mod ablation;
mod checkpoint;
mod features;

pub use ablation::{ablate_depth, ablate_upsample, AblationRow, AblationTable};
pub use adam::{adam_step, round_to_storage, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointIndex, TensorEntry, INDEX_FILE};
pub use features::{export_feature_maps, FeatureUnit};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{Image, Tensor};
use crate::io::{create_dir, load_pgm, save_pgm, write_json};
use crate::metrics::{score_pair, ssim_global, EvalReport};
use crate::nn::{
    add_regularizer_grad, data_term, init_params, training_loss, unet_backward, unet_forward, update_running_stats, Mode,
    ParameterStore, UNetConfig,
};
use crate::prng::{mix64, Prng};
use crate::synth::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Fraction of pairs held out for validation when no separate
    /// validation manifest is given.
    pub val_split: f64,
    /// Stops after this many optimizer steps (the last epoch may be partial).
    pub max_steps: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    /// Receives `best/`, `last/` and `history.jsonl`; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Training directory to continue from (its `last/` and `best/` checkpoints).
    pub resume: Option<PathBuf>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            seed: 0,
            lambda: crate::nn::DEFAULT_LAMBDA,
            val_split: 0.1,
            max_steps: None,
            manifest: None,
            val_manifest: None,
            out_dir: None,
            resume: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid!("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be at least 1"));
        }
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(invalid!("val_split {} outside (0, 1)", self.val_split));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid!("lambda must be non-negative"));
        }
        if self.max_steps == Some(0) {
            return Err(invalid!("max_steps must be at least 1"));
        }
        self.adam.validate()
    }
}

/// Metrics of one completed (or step-capped) epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Mean training objective over the epoch's batches (train mode).
    pub train_loss: f64,
    pub train_mse: f64,
    pub train_ssim: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_ssim: f64,
}

pub const HISTORY_FILE: &str = "history.jsonl";

pub fn write_history(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// In-memory `(input, target)` pairs.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub names: Vec<String>,
    pub inputs: Vec<Image>,
    pub targets: Vec<Image>,
}

impl PairSet {
    pub fn load(manifest: &DatasetManifest) -> Result<PairSet> {
        let mut set = PairSet::default();
        for pair in &manifest.pairs {
            let (input, target) = manifest.load_pair(pair)?;
            set.push(pair.input.clone(), input, target)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, name: String, input: Image, target: Image) -> Result<()> {
        if !input.same_dims(&target) {
            return Err(invalid!("pair {name}: input and target sizes differ"));
        }
        self.names.push(name);
        self.inputs.push(input);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> PairSet {
        PairSet {
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let xs: Vec<Tensor> = indices.iter().map(|&i| self.inputs[i].to_tensor()).collect();
        let ys: Vec<Tensor> = indices.iter().map(|&i| self.targets[i].to_tensor()).collect();
        Ok((Tensor::stack(&xs.iter().collect::<Vec<_>>())?, Tensor::stack(&ys.iter().collect::<Vec<_>>())?))
    }

    fn check_against(&self, unet: &UNetConfig) -> Result<()> {
        for (name, img) in self.names.iter().zip(&self.inputs) {
            if img.height() != unet.input_size || img.width() != unet.input_size {
                return Err(invalid!(
                    "pair {name} is {}x{}, network input_size is {}",
                    img.height(),
                    img.width(),
                    unet.input_size
                ));
            }
            if img.channels() != unet.in_channels || unet.in_channels != unet.out_channels {
                return Err(invalid!("pair {name} has {} channels, network expects {}", img.channels(), unet.in_channels));
            }
        }
        Ok(())
    }
}

/// Deterministic split by a hash of the pair index: index `i` is held out
/// when `hash(i) / 2^64 < frac`. Both parts are kept non-empty when there
/// are at least two pairs; a single pair serves as both.
pub fn split_indices(n: usize, frac: f64) -> (Vec<usize>, Vec<usize>) {
    let unit = |i: usize| (mix64(i as u64) >> 11) as f64 / (1u64 << 53) as f64;
    let (mut val, mut train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| unit(i) < frac);
    if n == 1 {
        return (vec![0], vec![0]);
    }
    let by_hash = |v: &Vec<usize>, min: bool| {
        let it = v.iter().copied();
        if min {
            it.min_by(|&a, &b| unit(a).total_cmp(&unit(b)))
        } else {
            it.max_by(|&a, &b| unit(a).total_cmp(&unit(b)))
        }
    };
    if val.is_empty() {
        let i = by_hash(&train, true).expect("n >= 2");
        train.retain(|&k| k != i);
        val.push(i);
    } else if train.is_empty() {
        let i = by_hash(&val, false).expect("n >= 2");
        val.retain(|&k| k != i);
        train.push(i);
    }
    (train, val)
}

/// Loads the training and validation sets a config points at.
pub fn load_split(cfg: &TrainConfig) -> Result<(PairSet, PairSet)> {
    let path = cfg.manifest.as_ref().ok_or_else(|| invalid!("train.manifest is not set"))?;
    let all = PairSet::load(&DatasetManifest::load(path)?)?;
    if all.is_empty() {
        return Err(invalid!("dataset {} has no pairs", path.display()));
    }
    match &cfg.val_manifest {
        Some(v) => {
            let val = PairSet::load(&DatasetManifest::load(v)?)?;
            if val.is_empty() {
                return Err(invalid!("validation dataset {} has no pairs", v.display()));
            }
            Ok((all, val))
        }
        None => {
            let (t, v) = split_indices(all.len(), cfg.val_split);
            Ok((all.subset(&t), all.subset(&v)))
        }
    }
}

/// Aggregate scores of the network in infer mode over a pair set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetScores {
    /// Training objective with batch size = set size.
    pub loss: f64,
    /// Mean per-pixel squared error.
    pub mse: f64,
    pub ssim: f64,
}

pub fn predict(unet: &UNetConfig, params: &ParameterStore, img: &Image) -> Result<Image> {
    if img.channels() != unet.in_channels {
        return Err(invalid!("image has {} channels, network expects {}", img.channels(), unet.in_channels));
    }
    unet.check_spatial(img.height(), img.width())?;
    let (y, _) = unet_forward(unet, params, &img.to_tensor(), Mode::Infer, &mut Prng::new(0))?;
    Image::from_tensor(&y, 0)
}

pub fn score_set(unet: &UNetConfig, params: &ParameterStore, set: &PairSet, lambda: f64) -> Result<SetScores> {
    if set.is_empty() {
        return Err(invalid!("cannot score an empty pair set"));
    }
    let (mut data, mut sq, mut ssim, mut pixels) = (0.0, 0.0, 0.0, 0usize);
    for (input, target) in set.inputs.iter().zip(&set.targets) {
        let out = predict(unet, params, input)?;
        let (d, _) = data_term(&out.to_tensor(), &target.to_tensor())?;
        data += d;
        sq += d;
        pixels += target.data().len();
        ssim += ssim_global(&out, target)?;
    }
    let n = set.len() as f64;
    let reg = lambda * (1.0 - unet.dropout_p).powi(2) * params.kernel_sq_norm();
    Ok(SetScores {
        loss: data / n + reg,
        mse: sq / pixels as f64,
        ssim: ssim / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best: Checkpoint,
    pub last: Checkpoint,
    /// Infer-mode scores on the training pairs before the first and after the last step.
    pub initial_train: SetScores,
    pub final_train: SetScores,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

/// Trains from the manifests named in `cfg`.
pub fn train(unet: &UNetConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (train_set, val_set) = load_split(cfg)?;
    train_on(unet, cfg, &train_set, &val_set)
}

struct Resumed {
    params: ParameterStore,
    adam: AdamState,
    rng: Prng,
    next_epoch: usize,
    step: u64,
    best: Checkpoint,
    history: Vec<EpochRecord>,
}

fn load_resume(dir: &Path, unet: &UNetConfig) -> Result<Resumed> {
    let last = Checkpoint::load(dir.join("last"))?;
    if last.index.unet != *unet {
        return Err(invalid!("resume checkpoint was trained with a different network configuration"));
    }
    let best = Checkpoint::load(dir.join("best"))?;
    let history = read_history(dir.join(HISTORY_FILE))?;
    Ok(Resumed {
        params: last.params,
        adam: last.adam,
        rng: Prng::new(last.index.rng_state),
        next_epoch: last.index.epoch + 1,
        step: last.index.step,
        best,
        history,
    })
}

/// Trains on in-memory pair sets.
pub fn train_on(unet: &UNetConfig, cfg: &TrainConfig, train_set: &PairSet, val_set: &PairSet) -> Result<TrainOutcome> {
    unet.validate()?;
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid!("training and validation sets must be non-empty"));
    }
    train_set.check_against(unet)?;
    val_set.check_against(unet)?;

    let resumed = match &cfg.resume {
        Some(dir) => Some(load_resume(dir, unet)?),
        None => None,
    };
    let (mut params, mut adam, mut g, first_epoch, mut step, mut best, mut history) = match resumed {
        Some(r) => (r.params, r.adam, r.rng, r.next_epoch, r.step, Some(r.best), r.history),
        None => {
            let mut g = Prng::new(cfg.seed);
            let params = init_params(unet, &mut g)?;
            let adam = AdamState::new(&params, cfg.adam);
            (params, adam, g, 1, 0, None, Vec::new())
        }
    };
    let initial_train = score_set(unet, &params, train_set, cfg.lambda)?;
    if let Some(dir) = &cfg.out_dir {
        create_dir(dir)?;
    }

    let snapshot = |params: &ParameterStore, adam: &AdamState, rng: &Prng, epoch: usize, step: u64, rec: &EpochRecord, best_ssim: f64| Checkpoint {
        index: CheckpointIndex {
            format_version: checkpoint::CHECKPOINT_FORMAT,
            unet: *unet,
            train: cfg.clone(),
            epoch,
            step,
            rng_state: rng.state(),
            val_ssim: rec.val_ssim,
            val_loss: rec.val_loss,
            best_val_ssim: best_ssim,
            adam: adam.config,
            adam_t: adam.t,
            tensors: checkpoint::tensor_entries(params),
        },
        params: params.clone(),
        adam: adam.clone(),
    };

    let mut last = None;
    let step_cap = cfg.max_steps.unwrap_or(u64::MAX);
    for epoch in first_epoch..=cfg.epochs {
        if step >= step_cap {
            break;
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        g.shuffle(&mut order);
        let (mut loss_sum, mut sq_sum, mut ssim_sum, mut seen, mut pixels) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= step_cap {
                break;
            }
            let (x, target) = train_set.batch(chunk)?;
            let (y, cache) = unet_forward(unet, &params, &x, Mode::Train, &mut g)?;
            let (loss, dy) = training_loss(&y, &target, &params, cfg.lambda, unet.dropout_p)?;
            let mut grads = unet_backward(unet, &params, &cache, &dy)?;
            add_regularizer_grad(&params, &mut grads, cfg.lambda, unet.dropout_p)?;
            adam_step(&mut params, &grads, &mut adam)?;
            update_running_stats(&mut params, &cache)?;
            round_to_storage(&mut params, &mut adam);
            step += 1;

            loss_sum += loss * chunk.len() as f64;
            sq_sum += y.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            pixels += y.len();
            for s in 0..chunk.len() {
                ssim_sum += ssim_global(&Image::from_tensor(&y, s)?, &Image::from_tensor(&target, s)?)?;
            }
            seen += chunk.len();
        }
        let val = score_set(unet, &params, val_set, cfg.lambda)?;
        let rec = EpochRecord {
            epoch,
            steps: step,
            train_loss: loss_sum / seen as f64,
            train_mse: sq_sum / pixels as f64,
            train_ssim: ssim_sum / seen as f64,
            val_loss: val.loss,
            val_mse: val.mse,
            val_ssim: val.ssim,
        };
        history.push(rec);
        let best_ssim = best.as_ref().map_or(f64::NEG_INFINITY, |b: &Checkpoint| b.index.best_val_ssim);
        let improved = rec.val_ssim > best_ssim;
        let best_ssim = best_ssim.max(rec.val_ssim);
        let snap = snapshot(&params, &adam, &g, epoch, step, &rec, best_ssim);
        if improved {
            if let Some(dir) = &cfg.out_dir {
                snap.save(dir.join("best"))?;
            }
            best = Some(snap.clone());
        }
        if let Some(dir) = &cfg.out_dir {
            snap.save(dir.join("last"))?;
            write_history(&history, dir.join(HISTORY_FILE))?;
        }
        last = Some(snap);
    }
    let last = last.ok_or_else(|| invalid!("no epochs left to run (epochs {}, resumed past it)", cfg.epochs))?;
    let final_train = score_set(unet, &params, train_set, cfg.lambda)?;
    Ok(TrainOutcome {
        history,
        best: best.expect("at least one epoch ran"),
        last,
        initial_train,
        final_train,
        train_pairs: train_set.len(),
        val_pairs: val_set.len(),
    })
}

/// Single infer-mode forward pass.
pub fn infer(ckpt: &Checkpoint, img: &Image) -> Result<Image> {
    predict(ckpt.unet(), &ckpt.params, img)
}

/// Writes `out_dir/<input file name>` for every pair of a dataset.
pub fn infer_dataset(ckpt: &Checkpoint, manifest: &DatasetManifest, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    create_dir(out_dir)?;
    for pair in &manifest.pairs {
        let input = load_pgm(manifest.input_path(pair))?;
        let name = Path::new(&pair.input)
            .file_name()
            .ok_or_else(|| invalid!("pair input {:?} has no file name", pair.input))?;
        save_pgm(&infer(ckpt, &input)?, out_dir.join(name))?;
    }
    Ok(())
}

/// Scores the network's outputs on every pair of a dataset.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, manifest: &DatasetManifest, label: &str) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(manifest.pairs.len());
    for pair in &manifest.pairs {
        let (input, target) = manifest.load_pair(pair)?;
        scores.push(score_pair(&pair.input, &infer(ckpt, &input)?, &target)?);
    }
    let path = manifest.root().join(DatasetManifest::FILE_NAME);
    Ok(EvalReport::from_scores(label, &path.to_string_lossy(), scores))
}

/// Writes the outcome's history and both checkpoints under `dir`.
pub fn save_outcome(outcome: &TrainOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    outcome.best.save(dir.join("best"))?;
    outcome.last.save(dir.join("last"))?;
    write_history(&outcome.history, dir.join(HISTORY_FILE))?;
    write_json(
        &serde_json::json!({
            "initial_train": outcome.initial_train,
            "final_train": outcome.final_train,
            "train_pairs": outcome.train_pairs,
            "val_pairs": outcome.val_pairs,
        }),
        dir.join("summary.json"),
    )
}
