mod common;

use common::{make_dataset, read_tree};
use ringforge::image::{Image, Tensor};
use ringforge::nn::{
    add_regularizer_grad, init_params, training_loss, unet_backward, unet_forward, Mode, UNetConfig, UpsampleMode,
};
use ringforge::synth::DatasetManifest;
use ringforge::train::*;
use ringforge::Prng;

fn tiny_unet() -> UNetConfig {
    UNetConfig {
        depth: 3,
        base_filters: 4,
        input_size: 16,
        ..UNetConfig::default()
    }
}

fn tiny_cfg(manifest: std::path::PathBuf) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        seed: 7,
        manifest: Some(manifest),
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), "d", 16, 2, 3, 1);
    let mut a_cfg = tiny_cfg(m.clone());
    a_cfg.out_dir = Some(dir.path().join("a"));
    let mut b_cfg = tiny_cfg(m);
    b_cfg.out_dir = Some(dir.path().join("b"));
    let a = train(&tiny_unet(), &a_cfg).unwrap();
    let b = train(&tiny_unet(), &b_cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.last.params, b.last.params);
    let strip = |t: Vec<(std::path::PathBuf, Vec<u8>)>| {
        t.into_iter()
            .filter(|(p, _)| p.extension().is_some_and(|e| e == "rft" || e == "jsonl"))
            .collect::<Vec<_>>()
    };
    let (ta, tb) = (read_tree(&dir.path().join("a")), read_tree(&dir.path().join("b")));
    assert!(!ta.is_empty());
    assert_eq!(strip(ta), strip(tb));
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), "d", 16, 2, 2, 3);
    let mut cfg = tiny_cfg(m.clone());
    cfg.epochs = 1;
    let out = train(&tiny_unet(), &cfg).unwrap();
    let ck_dir = dir.path().join("ck");
    out.last.save(&ck_dir).unwrap();
    let loaded = Checkpoint::load(&ck_dir).unwrap();
    assert_eq!(loaded.params, out.last.params);
    assert_eq!(loaded.adam, out.last.adam);
    let manifest = DatasetManifest::load(&m).unwrap();
    let (input, _) = manifest.load_pair(&manifest.pairs[0]).unwrap();
    let a = infer(&out.last, &input).unwrap();
    let b = infer(&loaded, &input).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(a.data(), infer(&loaded, &input).unwrap().data());
    assert_eq!((a.height(), a.width()), (16, 16));
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), "d", 16, 2, 3, 5);
    let mut full = tiny_cfg(m.clone());
    full.epochs = 2;
    let whole = train(&tiny_unet(), &full).unwrap();

    let mut first = tiny_cfg(m.clone());
    first.epochs = 1;
    first.out_dir = Some(dir.path().join("run"));
    train(&tiny_unet(), &first).unwrap();
    let mut second = tiny_cfg(m);
    second.epochs = 2;
    second.resume = Some(dir.path().join("run"));
    let resumed = train(&tiny_unet(), &second).unwrap();
    assert_eq!(resumed.last.params, whole.last.params);
    assert_eq!(resumed.history, whole.history);
    assert_eq!(resumed.last.adam.t, whole.last.adam.t);
}

#[test]
fn max_steps_caps_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), "d", 16, 2, 4, 2);
    let mut cfg = tiny_cfg(m);
    cfg.epochs = 50;
    cfg.max_steps = Some(5);
    let out = train(&tiny_unet(), &cfg).unwrap();
    assert_eq!(out.last.index.step, 5);
    assert_eq!(out.history.last().unwrap().steps, 5);
}

#[test]
fn identity_pair_lowers_data_term() {
    let mut set = PairSet::default();
    let img = Image::from_fn(16, 16, |r, c| 0.3 + 0.4 * ((r * 16 + c) as f64 / 255.0));
    set.push("p".into(), img.clone(), img.clone()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train_on(&tiny_unet(), &cfg, &set, &set).unwrap();
    // The data term is the per-pixel MSE times the pixel count.
    assert!(out.final_train.mse < out.initial_train.mse);
    assert_eq!(out.history.len(), 5);
}

#[test]
fn one_small_step_lowers_the_batch_loss() {
    let unet = tiny_unet();
    let mut g = Prng::new(99);
    let x = Tensor::from_vec(vec![2, 1, 16, 16], (0..512).map(|_| g.next_f64()).collect()).unwrap();
    let t = x.map(|v| (v * 0.8 + 0.1).clamp(0.0, 1.0));
    let mut decreased = 0;
    for seed in 0..20 {
        let mut params = init_params(&unet, &mut Prng::new(seed)).unwrap();
        let (y, cache) = unet_forward(&unet, &params, &x, Mode::Train, &mut Prng::new(seed + 100)).unwrap();
        let (l0, dy) = training_loss(&y, &t, &params, 1e-4, 0.3).unwrap();
        let mut grads = unet_backward(&unet, &params, &cache, &dy).unwrap();
        add_regularizer_grad(&params, &mut grads, 1e-4, 0.3).unwrap();
        let mut st = AdamState::new(
            &params,
            AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            },
        );
        adam_step(&mut params, &grads, &mut st).unwrap();
        let (y1, _) = unet_forward(&unet, &params, &x, Mode::Train, &mut Prng::new(seed + 100)).unwrap();
        let (l1, _) = training_loss(&y1, &t, &params, 1e-4, 0.3).unwrap();
        if l1 < l0 {
            decreased += 1;
        }
    }
    assert!(decreased >= 19, "{decreased}/20");
}

#[test]
fn infer_rejects_indivisible_images() {
    let unet = tiny_unet();
    let params = init_params(&unet, &mut Prng::new(0)).unwrap();
    assert!(predict(&unet, &params, &Image::filled(12, 16, 0.5)).is_err());
    let a = predict(&unet, &params, &Image::filled(32, 16, 0.5)).unwrap();
    assert_eq!((a.height(), a.width()), (32, 16));
}

#[test]
fn split_is_stable_and_non_empty() {
    for n in 1..40 {
        let (t, v) = split_indices(n, 0.1);
        assert!(!t.is_empty() && !v.is_empty());
        if n > 1 {
            assert_eq!(t.len() + v.len(), n);
            assert!(t.iter().all(|i| !v.contains(i)));
        }
        assert_eq!(split_indices(n, 0.1), (t, v));
    }
    let (_, v) = split_indices(2000, 0.1);
    assert!((150..250).contains(&v.len()), "{}", v.len());
}

#[test]
fn config_validation_and_strict_keys() {
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { val_split: 1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { val_split: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "adam": {"lr": 0.01}}"#).unwrap();
    assert_eq!((c.epochs, c.adam.lr, c.adam.beta2), (3, 0.01, 0.999));
}

#[test]
fn size_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), "d", 32, 1, 2, 1);
    assert!(train(&tiny_unet(), &tiny_cfg(m)).is_err());
}

#[test]
fn feature_map_counts_follow_filter_counts() {
    let dir = tempfile::tempdir().unwrap();
    for depth in [3, 4] {
        let unet = UNetConfig {
            depth,
            base_filters: 16,
            input_size: 32,
            ..UNetConfig::default()
        };
        let ck = untrained_checkpoint(&unet);
        let out = dir.path().join(format!("fm{depth}"));
        let img = Image::from_fn(32, 32, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        let units = export_feature_maps(&ck, &img, &out).unwrap();
        assert_eq!(units.len(), 2 * depth);
        for d in 0..depth {
            let enc = units.iter().find(|u| u.unit == format!("enc{d}")).unwrap();
            assert_eq!(enc.channels, 16 << d);
            assert_eq!(enc.height, 32 >> (d + 1));
            assert_eq!(std::fs::read_dir(out.join(&enc.unit)).unwrap().count(), 16 << d);
            let dec = units.iter().find(|u| u.unit == format!("dec{d}")).unwrap();
            assert_eq!(std::fs::read_dir(out.join(&dec.unit)).unwrap().count(), 16 << d);
        }
    }
}

#[test]
fn zero_input_gives_mid_gray_maps_at_init() {
    let dir = tempfile::tempdir().unwrap();
    let unet = UNetConfig {
        input_size: 16,
        ..UNetConfig::default()
    };
    let ck = untrained_checkpoint(&unet);
    export_feature_maps(&ck, &Image::filled(16, 16, 0.0), dir.path()).unwrap();
    for entry in std::fs::read_dir(dir.path().join("enc0")).unwrap() {
        let img = ringforge::io::load_pgm(entry.unwrap().path()).unwrap();
        assert!(img.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-12));
    }
}

fn untrained_checkpoint(unet: &UNetConfig) -> Checkpoint {
    let mut set = PairSet::default();
    let img = Image::filled(unet.input_size, unet.input_size, 0.5);
    set.push("p".into(), img.clone(), img).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        max_steps: Some(1),
        adam: AdamConfig {
            lr: 1e-12,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut ck = train_on(unet, &cfg, &set, &set).unwrap().last;
    ck.params = init_params(unet, &mut Prng::new(0)).unwrap();
    ck
}

#[test]
fn ablation_tables_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(dir.path(), "d", 32, 2, 3, 4);
    let (train_set, val_set) = load_split(&tiny_cfg(m.clone())).unwrap();
    let base = UNetConfig {
        base_filters: 2,
        input_size: 32,
        ..UNetConfig::default()
    };
    let mut cfg = tiny_cfg(m);
    cfg.epochs = 1;
    let a = ablate_upsample(&base, &cfg, &UpsampleMode::ALL, &train_set, &val_set).unwrap();
    let b = ablate_upsample(&base, &cfg, &UpsampleMode::ALL, &train_set, &val_set).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let csv = a.to_csv();
    assert!(csv.starts_with("variant,val_ssim,val_loss\ntransposed,"));
    assert_eq!(csv.lines().count(), 5);
    let d = ablate_depth(&base, &cfg, &[3, 4], &train_set, &val_set).unwrap();
    assert_eq!(d.rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), ["3 units", "4 units"]);
}
