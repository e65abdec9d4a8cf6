//! `ringforge` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration (including usage
//! errors and a failed gradient check), 2 filesystem errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "ringforge", version, about = "Ring-artifact simulation and removal for micro-CT slices")]
#[command(after_help = "Config file keys: seed, synth {size, n_masks, alpha, clean_dir, n_phantoms, mask}, \
filter {method, fft, butterworth, bilateral, stripe, n_theta, n_r}, unet {depth, base_filters, in_channels, \
out_channels, upsample, dropout_p, input_size}, train {epochs, batch_size, lambda, val_split, max_steps, manifest, \
val_manifest, out_dir, resume, adam}. Defaults: seed 0, synth.size 64, n_masks 25, alpha 0.7, filter.method stripe, \
unet.depth 3, base_filters 16, upsample transposed, input_size 64, train.epochs 100, batch_size 4, lambda 1e-4, \
val_split 0.1, adam.lr 1e-3. The resolved seed is copied into synth.mask.seed and train.seed. \
RINGFORGE_THREADS caps the worker pool.")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted override applied after the file, e.g. `--set unet.depth=4` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for every random draw (overrides the config's `seed`).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render ring masks.
    SynthMasks(SynthMasksArgs),
    /// Write procedural bamboo-like clean slices.
    SynthPhantoms(SynthPhantomsArgs),
    /// Blend masks onto clean slices and write a paired dataset.
    SynthDataset(SynthDatasetArgs),
    /// Build the three test datasets that vary one ring-feature group each.
    SynthTestVariants(SynthDatasetArgs),
    /// Resample an image to polar coordinates and back.
    Polar(PolarArgs),
    /// Run a classical ring filter on one image or on every input of a dataset.
    Filter(FilterArgs),
    /// Train the encoder-decoder network.
    Train(TrainArgs),
    /// Run a trained network on one image or on every input of a dataset.
    Infer(InferArgs),
    /// Score corrected images against a dataset's clean targets.
    Eval(EvalArgs),
    /// Train one model per depth or upsampling mode and tabulate validation scores.
    Ablate(AblateArgs),
    /// Export every encoder and decoder unit's channels as images.
    FeatureMaps(FeatureMapsArgs),
    /// Check analytic network gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthMasksArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Mask count (default: synth.n_masks).
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthPhantomsArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Image count (default: synth.n_phantoms).
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Clean slices (default: synth.clean_dir, else generated phantoms).
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Mask count (default: synth.n_masks).
    #[arg(long)]
    pub masks: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PolarArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_theta: Option<usize>,
    #[arg(long)]
    pub n_r: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    /// fft | butterworth | bilateral | stripe (default: filter.method).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training dataset (default: train.manifest).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Held-out validation dataset (default: hash split of the training set).
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Checkpoint directory, or a training directory (its `best/` is used).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding one output per pair, named like the pair's input file.
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long, default_value = "method")]
    pub label: String,
    /// Report file (JSON); printed summary only when unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// depth | upsample
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Comma-separated depths for `--kind depth`.
    #[arg(long, default_value = "4,5,6")]
    pub depths: String,
    /// Comma-separated modes for `--kind upsample`.
    #[arg(long, default_value = "transposed,bilinear,bicubic,nearest")]
    pub modes: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeatureMapsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 200)]
    pub probes: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 8)]
    pub filters: usize,
    #[arg(long, default_value = "transposed")]
    pub upsample: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ringforge::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
    }
    1
}

/// The error chain, skipping causes whose text an outer message already carries.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("RINGFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError(format!("RINGFORGE_THREADS must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|()| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
