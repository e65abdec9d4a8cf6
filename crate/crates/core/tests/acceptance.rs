//! Acceptance suite: one PASS/FAIL line per criterion and a non-zero exit on
//! any failure. Run alone with `cargo test -p ringforge --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ringforge::filters::{apply_filter_pipeline, FilterConfig, FilterMethod};
use ringforge::image::Image;
use ringforge::metrics::{mse, ssim_global, SSIM_C1, SSIM_C2};
use ringforge::nn::gradcheck::{central_differences, gradcheck, rel_error, GradCheckConfig};
use ringforge::nn::layers::{conv2d, conv2d_back, transposed_conv2, transposed_conv2_back, upsample_interp, upsample_interp_back};
use ringforge::nn::{Gradients, InterpMode, ParamKind, ParameterStore, UNetConfig, UpsampleMode};
use ringforge::polar::{cart_to_polar, default_sampling, polar_to_cart};
use ringforge::synth::{build_dataset, write_phantoms, DatasetManifest, MaskParams};
use ringforge::train::{
    ablate_depth, ablate_upsample, adam_step, export_feature_maps, infer, train_on, AdamConfig, AdamState,
    AblationTable, PairSet, TrainConfig, TrainOutcome,
};
use ringforge::{Prng, Tensor};

use common::read_tree;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn load(manifest: &Path) -> PairSet {
    PairSet::load(&DatasetManifest::load(manifest).unwrap()).unwrap()
}

fn dataset(root: &Path, name: &str, n_clean: usize, clean_seed: u64, n_masks: usize, mask_seed: u64) -> PathBuf {
    let clean = root.join(format!("{name}_clean"));
    write_phantoms(&clean, n_clean, 64, 64, clean_seed).unwrap();
    let params = MaskParams {
        seed: mask_seed,
        ..MaskParams::for_size(64, 64)
    };
    build_dataset(&clean, n_masks, &params, 0.7, root.join(name)).unwrap();
    root.join(name).join(DatasetManifest::FILE_NAME)
}

fn random(shape: &[usize], g: &mut Prng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| g.normal()).collect()).unwrap()
}

fn with_data(t: &Tensor, d: &[f64]) -> Tensor {
    Tensor::from_vec(t.shape().to_vec(), d.to_vec()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error of `analytic` against central differences of
/// `x -> <f(x), r>` over every coordinate of `x`.
fn linear_check(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> Tensor, r: &Tensor) -> f64 {
    let probes: Vec<usize> = (0..x.len()).collect();
    let numeric = central_differences(|d| dot(&f(&with_data(x, d)), r), x.data(), &probes, 1e-5);
    analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_error(*a, *n))
        .fold(0.0, f64::max)
}

fn linear_layers_max_error() -> f64 {
    let mut g = Prng::new(11);
    let mut worst: f64 = 0.0;
    for ks in [3, 1] {
        let x = random(&[2, 3, 6, 5], &mut g);
        let k = random(&[4, 3, ks, ks], &mut g);
        let b = random(&[4], &mut g);
        let r = random(&[2, 4, 6, 5], &mut g);
        let gr = conv2d_back(&x, &k, &r).unwrap();
        worst = worst.max(linear_check(&x, &gr.dx, |x| conv2d(x, &k, &b).unwrap(), &r));
        worst = worst.max(linear_check(&k, &gr.dk, |k| conv2d(&x, k, &b).unwrap(), &r));
        worst = worst.max(linear_check(&b, &gr.db, |b| conv2d(&x, &k, b).unwrap(), &r));
    }
    let x = random(&[2, 4, 3, 4], &mut g);
    let k = random(&[4, 2, 2, 2], &mut g);
    let b = random(&[2], &mut g);
    let r = random(&[2, 2, 6, 8], &mut g);
    let gr = transposed_conv2_back(&x, &k, &r).unwrap();
    worst = worst.max(linear_check(&x, &gr.dx, |x| transposed_conv2(x, &k, &b).unwrap(), &r));
    worst = worst.max(linear_check(&k, &gr.dk, |k| transposed_conv2(&x, k, &b).unwrap(), &r));
    worst = worst.max(linear_check(&b, &gr.db, |b| transposed_conv2(&x, &k, b).unwrap(), &r));
    for mode in [InterpMode::Nearest, InterpMode::Bilinear, InterpMode::Bicubic] {
        let x = random(&[1, 2, 4, 3], &mut g);
        let r = random(&[1, 2, 8, 6], &mut g);
        let dx = upsample_interp_back(x.shape(), mode, &r).unwrap();
        worst = worst.max(linear_check(&x, &dx, |x| upsample_interp(x, mode).unwrap(), &r));
    }
    worst
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let report = gradcheck(&GradCheckConfig::default()).unwrap();
    let layers = linear_layers_max_error();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        report.probes == 200 && report.max_rel_error < 1e-4 && layers < 1e-6 && secs < 60.0,
        format!(
            "network max rel error {:.2e} over {} probes ({} redrawn at kinks), linear layers {:.2e}, {:.1}s",
            report.max_rel_error, report.probes, report.skipped, layers, secs
        ),
    )
}

fn criterion_2(root: &Path) -> Outcome {
    let a = dataset(&root.join("c2a"), "d", 4, 21, 25, 22);
    let b = dataset(&root.join("c2b"), "d", 4, 21, 25, 22);
    let m = DatasetManifest::load(&a).unwrap();
    let stable = read_tree(a.parent().unwrap()) == read_tree(b.parent().unwrap());
    let mut combos: Vec<(usize, usize)> = m.pairs.iter().map(|p| (p.mask_id, p.clean_id)).collect();
    combos.sort_unstable();
    combos.dedup();
    let mut arithmetic = true;
    for (n_clean, n_masks) in [(1, 3), (3, 1), (5, 7)] {
        let dir = root.join(format!("c2_{n_clean}x{n_masks}"));
        write_phantoms(dir.join("clean"), n_clean, 16, 16, 3).unwrap();
        let params = MaskParams::for_size(16, 16);
        let m = build_dataset(dir.join("clean"), n_masks, &params, 0.7, dir.join("out")).unwrap();
        arithmetic &= m.pairs.len() == n_clean * n_masks;
    }
    verdict(
        m.pairs.len() == 100 && combos.len() == 100 && stable && arithmetic,
        format!(
            "{} pairs, {} distinct (mask, clean) combinations, byte-stable rerun: {stable}, masks x clean count: {arithmetic}",
            m.pairs.len(),
            combos.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let n = 128;
    let c = (n as f64 - 1.0) / 2.0;
    let radial = |r: f64| 0.5 + 0.4 * (std::f64::consts::PI * r / c).cos();
    let img = Image::from_fn(n, n, |i, j| radial((i as f64 - c).hypot(j as f64 - c)));
    let (n_theta, n_r) = default_sampling(n, n);
    let p = cart_to_polar(&img, n_theta, n_r).unwrap();
    let back = polar_to_cart(&p, n, n, Some(&img)).unwrap();
    let (mut sum, mut count, mut worst) = (0.0, 0usize, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            let r = (i as f64 - c).hypot(j as f64 - c);
            if r <= p.r_max() {
                let e = back.get(i, j) - radial(r);
                sum += e * e;
                worst = worst.max(e.abs());
                count += 1;
            }
        }
    }
    let err = sum / count as f64;
    verdict(
        err <= 1e-3,
        format!("{n_theta}x{n_r} grid, in-disk MSE {err:.2e} over {count} pixels, max error {worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut g = Prng::new(4);
    let rand = |g: &mut Prng, h, w| Image::from_fn(h, w, |_, _| g.next_f64());
    let mut identity = true;
    let mut symmetric = true;
    for _ in 0..100 {
        let x = rand(&mut g, 9, 11);
        let y = rand(&mut g, 9, 11);
        identity &= ssim_global(&x, &x).unwrap() == 1.0;
        symmetric &= ssim_global(&x, &y).unwrap().to_bits() == ssim_global(&y, &x).unwrap().to_bits();
        symmetric &= mse(&x, &y).unwrap().to_bits() == mse(&y, &x).unwrap().to_bits();
    }
    let constant = ssim_global(&Image::filled(8, 8, 0.0), &Image::filled(8, 8, 1.0)).unwrap();
    let expected = SSIM_C1 * SSIM_C2 / ((1.0 + SSIM_C1) * SSIM_C2);
    let constant_ok = (constant - expected).abs() < 1e-9 && (constant - 9.999e-5).abs() < 1e-8;
    let half = mse(&Image::filled(5, 5, 0.0), &Image::filled(5, 5, 0.5)).unwrap();
    let a = Image::gray(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    let b = Image::gray(2, 2, vec![0.6, 0.4, 0.7, 0.5]).unwrap();
    let small = mse(&a, &b).unwrap();
    let mse_ok = (half - 0.25).abs() < 1e-12 && (small - 0.015).abs() < 1e-12 && mse(&a, &a).unwrap() == 0.0;
    verdict(
        identity && symmetric && constant_ok && mse_ok,
        format!(
            "ssim(x,x)=1: {identity}, bit-exact symmetry: {symmetric}, constant case {constant:.9e}, mse examples {half} and {small:.15}"
        ),
    )
}

fn criterion_5(root: &Path) -> Outcome {
    let t = Instant::now();
    let set = load(&dataset(root, "c5", 5, 300, 10, 500));
    let baseline = mean(set.inputs.iter().zip(&set.targets).map(|(a, b)| ssim_global(a, b).unwrap()));
    let mut parts = vec![format!("{} pairs, ringed {baseline:.4}", set.len())];
    let mut ok = set.len() == 50;
    for method in FilterMethod::ALL {
        let cfg = FilterConfig::with_method(method);
        let score = mean(
            set.inputs
                .iter()
                .zip(&set.targets)
                .map(|(a, b)| ssim_global(&apply_filter_pipeline(a, &cfg).unwrap(), b).unwrap()),
        );
        ok &= score >= baseline;
        if method == FilterMethod::Stripe {
            ok &= score - baseline >= 0.05;
        }
        parts.push(format!("{} {score:.4}", method.name()));
    }
    let secs = t.elapsed().as_secs_f64();
    parts.push(format!("{secs:.1}s"));
    verdict(ok && secs < 120.0, parts.join(", "))
}

struct Desk {
    train: PairSet,
    val: PairSet,
    unet: UNetConfig,
    cfg: TrainConfig,
}

impl Desk {
    fn new(root: &Path) -> Desk {
        let train = load(&dataset(root, "desk_train", 4, 100, 10, 1));
        let val = load(&dataset(root, "desk_val", 2, 200, 5, 1000));
        let cfg = TrainConfig {
            epochs: 1000,
            max_steps: Some(200),
            seed: 0,
            ..TrainConfig::default()
        };
        Desk {
            train,
            val,
            unet: UNetConfig::default(),
            cfg,
        }
    }

    fn held_out_ssim(&self, f: impl Fn(&Image) -> Image) -> f64 {
        mean(self.val.inputs.iter().zip(&self.val.targets).map(|(a, b)| ssim_global(&f(a), b).unwrap()))
    }
}

fn criterion_6(desk: &Desk) -> (Outcome, Option<TrainOutcome>) {
    let t = Instant::now();
    let outcome = train_on(&desk.unet, &desk.cfg, &desk.train, &desk.val).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (initial, last) = (outcome.initial_train.mse, outcome.final_train.mse);
    let ringed = desk.held_out_ssim(Image::clone);
    let network = desk.held_out_ssim(|x| infer(&outcome.last, x).unwrap());
    let steps = outcome.last.index.step;
    let result = verdict(
        desk.train.len() == 40 && steps == 200 && last < initial / 5.0 && network > ringed && secs < 600.0,
        format!(
            "{steps} steps on {} pairs: train MSE {initial:.5} -> {last:.5} (ratio {:.1}), held-out SSIM {network:.4} vs ringed {ringed:.4}, {secs:.1}s",
            desk.train.len(),
            initial / last
        ),
    );
    (result, Some(outcome))
}

fn criterion_7(desk: &Desk, outcome: Option<&TrainOutcome>, report: &Path) -> Outcome {
    let Some(outcome) = outcome else {
        return Err("no trained network from criterion 6".into());
    };
    let mut rows = vec![("ringed".to_string(), desk.held_out_ssim(Image::clone))];
    rows.push(("network".into(), desk.held_out_ssim(|x| infer(&outcome.last, x).unwrap())));
    for method in FilterMethod::ALL {
        let cfg = FilterConfig::with_method(method);
        rows.push((method.name().into(), desk.held_out_ssim(|x| apply_filter_pipeline(x, &cfg).unwrap())));
    }
    let mut csv = String::from("method,mean_ssim\n");
    for (name, v) in &rows {
        csv.push_str(&format!("{name},{v:.6}\n"));
    }
    std::fs::create_dir_all(report.parent().unwrap()).unwrap();
    std::fs::write(report, &csv).unwrap();
    let best_filter = rows[2..].iter().map(|r| r.1).fold(f64::MIN, f64::max);
    let summary: Vec<String> = rows.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
    Ok(format!(
        "{}; network {} the best filter (informational); report {}",
        summary.join(", "),
        if rows[1].1 > best_filter { "beats" } else { "trails" },
        report.display()
    ))
}

fn criterion_8(desk: &Desk, root: &Path) -> Outcome {
    let cfg = TrainConfig {
        max_steps: Some(4),
        ..desk.cfg.clone()
    };
    let run = |dir: &Path| {
        std::fs::create_dir_all(dir).unwrap();
        let depth = ablate_depth(&desk.unet, &cfg, &[3, 4, 5], &desk.train, &desk.val).unwrap();
        let upsample = ablate_upsample(&desk.unet, &cfg, &UpsampleMode::ALL, &desk.train, &desk.val).unwrap();
        depth.save_csv(dir.join("depth.csv")).unwrap();
        upsample.save_csv(dir.join("upsample.csv")).unwrap();
        (depth, upsample)
    };
    let (depth, upsample) = run(&root.join("ablate_a"));
    run(&root.join("ablate_b"));
    let identical = read_tree(&root.join("ablate_a")) == read_tree(&root.join("ablate_b"));
    let header = AblationTable::HEADER;
    let schema = depth.to_csv().starts_with(header) && upsample.to_csv().starts_with(header);
    let labels: Vec<&str> = depth.rows.iter().chain(&upsample.rows).map(|r| r.variant.as_str()).collect();
    let finite = depth.rows.iter().chain(&upsample.rows).all(|r| r.val_ssim.is_finite() && r.val_loss.is_finite());
    verdict(
        identical && schema && finite && labels.len() == 7,
        format!("rows [{}], schema \"{header}\": {schema}, byte-identical rerun: {identical}", labels.join(", ")),
    )
}

fn criterion_9(desk: &Desk, outcome: Option<&TrainOutcome>, root: &Path) -> Outcome {
    let Some(outcome) = outcome else {
        return Err("no trained network from criterion 6".into());
    };
    let deeper = UNetConfig {
        depth: 4,
        ..desk.unet
    };
    let one_step = TrainConfig {
        max_steps: Some(1),
        ..desk.cfg.clone()
    };
    let depth4 = train_on(&deeper, &one_step, &desk.train, &desk.val).unwrap().last;
    let mut parts = Vec::new();
    let mut ok = true;
    for (ckpt, name) in [(&outcome.last, "depth3"), (&depth4, "depth4")] {
        let cfg = *ckpt.unet();
        let dir = root.join("features").join(name);
        let units = export_feature_maps(ckpt, &desk.val.inputs[0], &dir).unwrap();
        ok &= units.len() == 2 * cfg.depth;
        for u in &units {
            let d: usize = u.unit[3..].parse().unwrap();
            let files = std::fs::read_dir(dir.join(&u.unit)).unwrap().count();
            ok &= files == u.channels && u.channels == cfg.base_filters << d;
        }
        let counts: Vec<String> = units.iter().map(|u| format!("{}={}", u.unit, u.channels)).collect();
        parts.push(format!("{name}: {}", counts.join(" ")));
    }
    verdict(ok, parts.join("; "))
}

fn adam_first_step(g: f64, config: AdamConfig) -> f64 {
    let mut store = ParameterStore::new();
    store.add("w".into(), ParamKind::Kernel, 1, Tensor::from_vec(vec![1], vec![0.0]).unwrap());
    let mut grads = Gradients::zeros_like(&store);
    grads.slots[0].data_mut()[0] = g;
    let mut state = AdamState::new(&store, config);
    adam_step(&mut store, &grads, &mut state).unwrap();
    store.get("w").data()[0]
}

fn criterion_10() -> Outcome {
    let delta = adam_first_step(0.5, AdamConfig::default());
    let expected = -0.001 * 0.5 / (0.5 + 1e-7);
    // -9.9999998e-4 is the same step at eps = 1e-8.
    let quoted = adam_first_step(0.5, AdamConfig { eps: 1e-8, ..AdamConfig::default() });
    verdict(
        (delta - expected).abs() < 1e-12 && (quoted + 9.9999998e-4).abs() < 1e-12,
        format!(
            "eps 1e-7: {delta:.12e} vs derived {expected:.12e} (diff {:.1e}); eps 1e-8: {quoted:.12e} vs -9.9999998e-4",
            (delta - expected).abs()
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let report = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("network_vs_filters.csv");
    let mut failures = 0;
    let mut line = |n: usize, name: &str, elapsed: Duration, result: std::thread::Result<Outcome>| {
        let (status, detail) = match result {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("criterion {n:>2} {status} {name} [{:.1}s]: {detail}", elapsed.as_secs_f64());
    };
    let timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f));
        (t.elapsed(), r)
    };

    let (e, r) = timed(&mut criterion_1);
    line(1, "gradient correctness", e, r);
    let (e, r) = timed(&mut || criterion_2(root));
    line(2, "dataset determinism and count", e, r);
    let (e, r) = timed(&mut criterion_3);
    line(3, "polar round trip", e, r);
    let (e, r) = timed(&mut criterion_4);
    line(4, "metric properties", e, r);
    let (e, r) = timed(&mut || criterion_5(root));
    line(5, "classical filter efficacy", e, r);

    let desk = Desk::new(root);
    let mut trained = None;
    let (e, r) = timed(&mut || {
        let (r, o) = criterion_6(&desk);
        trained = o;
        r
    });
    line(6, "desk-scale training trend", e, r);
    let (e, r) = timed(&mut || criterion_7(&desk, trained.as_ref(), &report));
    line(7, "network vs filters report", e, r);
    let (e, r) = timed(&mut || criterion_8(&desk, root));
    line(8, "ablation harness", e, r);
    let (e, r) = timed(&mut || criterion_9(&desk, trained.as_ref(), root));
    line(9, "feature-map export", e, r);
    let (e, r) = timed(&mut criterion_10);
    line(10, "adam first step", e, r);

    if failures > 0 {
        println!("acceptance: {failures} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 10 criteria passed");
}
