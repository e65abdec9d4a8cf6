use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use ringforge::filters::{apply_filter_pipeline, FilterMethod};
use ringforge::io::{create_dir, load_pgm, save_pgm, write_json};
use ringforge::metrics::{evaluate_pairs, score_pair, EvalReport};
use ringforge::nn::gradcheck::{gradcheck, GradCheckConfig};
use ringforge::nn::UpsampleMode;
use ringforge::polar::{cart_to_polar, default_sampling, polar_to_cart};
use ringforge::synth::{
    build_dataset, build_test_variant, render_mask, sample_rings, write_phantoms, DatasetManifest, TestVariant,
};
use ringforge::train::{
    ablate_depth, ablate_upsample, export_feature_maps, infer, infer_dataset, load_split, save_outcome, train_on,
    Checkpoint, INDEX_FILE,
};
use ringforge::Prng;

use crate::config::{resolve, ConfigError, Resolved};
use crate::{Cli, Command};

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seed: u64,
    config: &'a crate::config::CliConfig,
    overrides: &'a [String],
    config_path: Option<&'a Path>,
}

fn write_run(dir: &Path, cmd: &Command, r: &Resolved) -> Result<()> {
    create_dir(dir)?;
    let record = RunRecord {
        tool: "ringforge",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd,
        seed: r.config.seed,
        config: &r.config,
        overrides: &r.overrides,
        config_path: r.config_path.as_deref(),
    };
    write_json(&record, dir.join("run.json"))?;
    Ok(())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn file_name(p: &Path) -> Result<&std::ffi::OsStr> {
    p.file_name().with_context(|| format!("{} has no file name", p.display()))
}

/// A checkpoint directory, or a training directory holding `best/`.
fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let best = dir.join("best");
    let path = if !dir.join(INDEX_FILE).exists() && best.join(INDEX_FILE).exists() { best } else { dir.to_path_buf() };
    Ok(Checkpoint::load(&path)?)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    let items = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| usage(format!("invalid {what} {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        bail!(usage(format!("empty {what} list")));
    }
    Ok(items)
}

fn print_report(report: &EvalReport) {
    println!(
        "{}: mean_ssim={:.6} std_ssim={:.6} mean_mse={:.6} std_mse={:.6} pairs={}",
        report.method,
        report.mean_ssim,
        report.std_ssim,
        report.mean_mse,
        report.std_mse,
        report.pairs.len()
    );
}

/// Clean slices from `--clean`, `synth.clean_dir` or freshly generated phantoms.
fn clean_source(explicit: Option<&Path>, r: &Resolved, out: &Path) -> Result<PathBuf> {
    if let Some(p) = explicit.or(r.config.synth.clean_dir.as_deref()) {
        return Ok(p.to_path_buf());
    }
    let s = &r.config.synth;
    let dir = out.join("source");
    write_phantoms(&dir, s.n_phantoms, s.size, s.size, r.config.seed)?;
    Ok(dir)
}

pub fn run(cli: Cli) -> Result<()> {
    let r = resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    let cfg = &r.config;
    println!("seed: {}", cfg.seed);
    match &cli.command {
        Command::SynthMasks(a) => {
            let n = a.count.unwrap_or(cfg.synth.n_masks);
            let params = &cfg.synth.mask;
            let size = cfg.synth.size;
            params.validate()?;
            write_run(&a.out, &cli.command, &r)?;
            let mut records = Vec::with_capacity(n);
            for k in 0..n {
                let mut g = Prng::new(params.seed.wrapping_add(k as u64));
                let rings = sample_rings(params, &mut g)?;
                let name = format!("m{k:03}.pgm");
                save_pgm(&render_mask(&rings, size, size), a.out.join(&name))?;
                records.push(json!({ "file": name, "rings": rings }));
            }
            write_json(&records, a.out.join("rings.json"))?;
            println!("wrote {n} masks to {}", a.out.display());
        }
        Command::SynthPhantoms(a) => {
            let n = a.count.unwrap_or(cfg.synth.n_phantoms);
            write_run(&a.out, &cli.command, &r)?;
            write_phantoms(&a.out, n, cfg.synth.size, cfg.synth.size, cfg.seed)?;
            println!("wrote {n} phantoms to {}", a.out.display());
        }
        Command::SynthDataset(a) => {
            write_run(&a.out, &cli.command, &r)?;
            let clean = clean_source(a.clean.as_deref(), &r, &a.out)?;
            let n = a.masks.unwrap_or(cfg.synth.n_masks);
            let m = build_dataset(&clean, n, &cfg.synth.mask, cfg.synth.alpha, &a.out)?;
            println!(
                "wrote {} pairs ({} masks x {} clean) to {}",
                m.pairs.len(),
                n,
                m.pairs.len() / n,
                a.out.join(DatasetManifest::FILE_NAME).display()
            );
        }
        Command::SynthTestVariants(a) => {
            write_run(&a.out, &cli.command, &r)?;
            let clean = clean_source(a.clean.as_deref(), &r, &a.out)?;
            let n = a.masks.unwrap_or(cfg.synth.n_masks);
            for v in TestVariant::ALL {
                let dir = a.out.join(v.dir_name());
                let m = build_test_variant(&clean, v, n, &cfg.synth.mask, cfg.synth.alpha, &dir)?;
                println!("{}: {} pairs in {}", v.label(), m.pairs.len(), dir.display());
            }
        }
        Command::Polar(a) => {
            let img = load_pgm(&a.input)?;
            let (dt, dr) = default_sampling(img.height(), img.width());
            let n_theta = a.n_theta.or(cfg.filter.n_theta).unwrap_or(dt);
            let n_r = a.n_r.or(cfg.filter.n_r).unwrap_or(dr);
            let p = cart_to_polar(&img, n_theta, n_r)?;
            let back = polar_to_cart(&p, img.height(), img.width(), Some(&img))?;
            write_run(&a.out, &cli.command, &r)?;
            save_pgm(&p.to_image(), a.out.join("polar.pgm"))?;
            save_pgm(&back, a.out.join("roundtrip.pgm"))?;
            println!("polar grid {n_theta} angles x {n_r} radii written to {}", a.out.display());
        }
        Command::Filter(a) => {
            let mut fc = cfg.filter;
            if let Some(m) = &a.method {
                fc.method = m.parse::<FilterMethod>()?;
            }
            fc.validate()?;
            write_run(&a.out, &cli.command, &r)?;
            match (&a.input, &a.manifest) {
                (Some(input), _) => {
                    let out = apply_filter_pipeline(&load_pgm(input)?, &fc)?;
                    save_pgm(&out, a.out.join(file_name(input)?))?;
                    println!("{}: filtered 1 image", fc.method.name());
                }
                (None, Some(manifest)) => {
                    let m = DatasetManifest::load(manifest)?;
                    for pair in &m.pairs {
                        let out = apply_filter_pipeline(&load_pgm(m.input_path(pair))?, &fc)?;
                        save_pgm(&out, a.out.join(file_name(Path::new(&pair.input))?))?;
                    }
                    println!("{}: filtered {} images into {}", fc.method.name(), m.pairs.len(), a.out.display());
                }
                (None, None) => bail!(usage("filter needs --input or --manifest")),
            }
        }
        Command::Train(a) => {
            let mut tc = cfg.train.clone();
            if let Some(m) = &a.manifest {
                tc.manifest = Some(m.clone());
            }
            if let Some(v) = &a.val_manifest {
                tc.val_manifest = Some(v.clone());
            }
            tc.out_dir = Some(a.out.clone());
            cfg.unet.validate()?;
            tc.validate()?;
            let (train_set, val_set) = load_split(&tc)?;
            write_run(&a.out, &cli.command, &r)?;
            let outcome = train_on(&cfg.unet, &tc, &train_set, &val_set)?;
            save_outcome(&outcome, &a.out)?;
            for e in &outcome.history {
                println!(
                    "epoch {:>3} steps {:>5} train_loss {:.6} val_loss {:.6} val_ssim {:.6}",
                    e.epoch, e.steps, e.train_loss, e.val_loss, e.val_ssim
                );
            }
            println!(
                "train_mse: {:.6} -> {:.6}; best val_ssim {:.6} at epoch {}",
                outcome.initial_train.mse,
                outcome.final_train.mse,
                outcome.best.index.val_ssim,
                outcome.best.index.epoch
            );
        }
        Command::Infer(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            write_run(&a.out, &cli.command, &r)?;
            match (&a.input, &a.manifest) {
                (Some(input), _) => {
                    let out = infer(&ckpt, &load_pgm(input)?)?;
                    save_pgm(&out, a.out.join(file_name(input)?))?;
                    println!("corrected 1 image");
                }
                (None, Some(manifest)) => {
                    let m = DatasetManifest::load(manifest)?;
                    infer_dataset(&ckpt, &m, &a.out)?;
                    println!("corrected {} images into {}", m.pairs.len(), a.out.display());
                }
                (None, None) => bail!(usage("infer needs --input or --manifest")),
            }
        }
        Command::Eval(a) => {
            let m = DatasetManifest::load(&a.manifest)?;
            let baseline = m
                .pairs
                .iter()
                .map(|p| {
                    let (input, target) = m.load_pair(p)?;
                    score_pair(&p.input, &input, &target)
                })
                .collect::<ringforge::Result<Vec<_>>>()?;
            let baseline = EvalReport::from_scores("baseline", &a.manifest.to_string_lossy(), baseline);
            let report = evaluate_pairs(&m, &a.outputs, &a.label)?;
            print_report(&baseline);
            print_report(&report);
            if let Some(out) = &a.out {
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    write_run(parent, &cli.command, &r)?;
                }
                report.save(out)?;
            }
        }
        Command::Ablate(a) => {
            let mut tc = cfg.train.clone();
            if let Some(m) = &a.manifest {
                tc.manifest = Some(m.clone());
            }
            if let Some(v) = &a.val_manifest {
                tc.val_manifest = Some(v.clone());
            }
            tc.validate()?;
            let (train_set, val_set) = load_split(&tc)?;
            write_run(&a.out, &cli.command, &r)?;
            let (table, file) = match a.kind.as_str() {
                "depth" => {
                    let depths: Vec<usize> = parse_list(&a.depths, "depth")?;
                    (ablate_depth(&cfg.unet, &tc, &depths, &train_set, &val_set)?, "ablation_depth.csv")
                }
                "upsample" => {
                    let modes: Vec<UpsampleMode> = parse_list(&a.modes, "upsample mode")?;
                    (ablate_upsample(&cfg.unet, &tc, &modes, &train_set, &val_set)?, "ablation_upsample.csv")
                }
                other => bail!(usage(format!("--kind must be depth or upsample, got {other:?}"))),
            };
            table.save_csv(a.out.join(file))?;
            print!("{}", table.to_csv());
        }
        Command::FeatureMaps(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let img = load_pgm(&a.input)?;
            write_run(&a.out, &cli.command, &r)?;
            let units = export_feature_maps(&ckpt, &img, &a.out)?;
            for u in &units {
                println!("{}: {} maps of {}x{}", u.unit, u.channels, u.height, u.width);
            }
        }
        Command::Gradcheck(a) => {
            let gc = GradCheckConfig {
                depth: a.depth,
                size: a.size,
                batch: a.batch,
                base_filters: a.filters,
                upsample: a.upsample.parse()?,
                probes: a.probes,
                eps: a.eps,
                lambda: cfg.train.lambda,
                seed: cfg.seed,
            };
            let report = gradcheck(&gc)?;
            println!(
                "probes: {} (redrawn {}) max_rel_error: {:.3e} mean_rel_error: {:.3e} worst: {}[{}]",
                report.probes, report.skipped, report.max_rel_error, report.mean_rel_error, report.worst.0, report.worst.1
            );
            if !(report.max_rel_error < a.tolerance) {
                bail!(usage(format!(
                    "gradient check failed: max relative error {:.3e} >= {:.1e}",
                    report.max_rel_error, a.tolerance
                )));
            }
            println!("gradcheck: PASS");
        }
    }
    Ok(())
}
