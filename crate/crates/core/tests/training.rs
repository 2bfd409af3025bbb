use std::path::PathBuf;
use std::sync::OnceLock;

use longscan::manifest::{Manifest, Split};
use longscan::pipeline::{SegmentMethod, SegmentOptions};
use longscan::ssm::{backbone_backward, backbone_forward_train, load_checkpoint, ModelConfig, ModelParams, ParamSet};
use longscan::synth::{generate_dataset, GenConfig};
use longscan::train::{adam_step, loss, lr_at, train, AdamState, LossConfig, LossKind, OptimConfig, TrainOptions};
use longscan::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset() -> &'static (PathBuf, Manifest) {
    static DATA: OnceLock<(PathBuf, Manifest)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = GenConfig {
            duration: 20.0,
            ..GenConfig::new(2, 10, 5)
        };
        let m = generate_dataset(&cfg, dir.join("data")).unwrap();
        (dir, m)
    })
}

fn options(tag: &str, seed: u64) -> TrainOptions {
    let (dir, _) = dataset();
    TrainOptions {
        feature_dir: Some(dir.join("features")),
        ..TrainOptions::new(dir.join(tag), seed)
    }
}

fn one_epoch() -> OptimConfig {
    OptimConfig {
        epochs: 1,
        ..OptimConfig::desk()
    }
}

fn seg() -> SegmentOptions {
    SegmentOptions {
        method: SegmentMethod::Vad,
        max_segment_dur: 10.0,
        ..SegmentOptions::default()
    }
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bce = LossConfig {
        kind: LossKind::Bce,
        class_weights: vec![],
    };
    let cases = [
        (LossConfig::ce(), 2),
        (LossConfig::ce(), 3),
        (LossConfig::weighted(vec![1.0, 3.0, 3.0]), 3),
        (bce, 2),
    ];
    let h = 1e-6;
    for (cfg, c) in cases {
        for _ in 0..20 {
            let z: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let label = rng.random_range(0..c);
            let (_, g) = loss(&z, label, &cfg).unwrap();
            for i in 0..c {
                let (mut up, mut dn) = (z.clone(), z.clone());
                up[i] += h;
                dn[i] -= h;
                let num = (loss(&up, label, &cfg).unwrap().0 - loss(&dn, label, &cfg).unwrap().0) / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-6, "{cfg:?} class {i}: {num} vs {}", g[i]);
            }
        }
    }
}

proptest! {
    #[test]
    fn learning_rate_never_rises_after_warmup(
        warmup in 1usize..50,
        start in 0usize..6,
        factor in 0.05f64..=1.0,
        steps_per_epoch in 1usize..40,
    ) {
        let cfg = OptimConfig { warmup_steps: warmup, decay_start_epoch: start, decay_factor: factor, ..OptimConfig::desk() };
        let mut prev = f64::INFINITY;
        for step in warmup..warmup + 12 * steps_per_epoch {
            let lr = lr_at(step, step / steps_per_epoch, &cfg);
            prop_assert!(lr <= prev && lr > 0.0);
            prev = lr;
        }
        for step in 1..warmup {
            prop_assert!(lr_at(step, 0, &cfg) > lr_at(step - 1, 0, &cfg));
        }
    }
}

fn random_input(frames: usize, mels: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames * mels).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn loss_and_grad(m: &ModelParams, x: &longscan::audio::FbankMatrix, label: usize) -> (f64, ModelParams) {
    let (logits, act) = backbone_forward_train(x, m).unwrap();
    let (v, d) = loss(&logits, label, &LossConfig::ce()).unwrap();
    (v, backbone_backward(&act, m, &d).unwrap())
}

#[test]
fn small_adam_step_lowers_the_loss() {
    let cfg = ModelConfig::tiny(2);
    let m0 = ModelParams::init(&cfg, 11);
    let times = (0..64).map(|i| i as f64 * 0.01).collect();
    let x = longscan::audio::FbankMatrix::new(random_input(64, cfg.n_mels, 2), cfg.n_mels, times).unwrap();
    let (before, g) = loss_and_grad(&m0, &x, 1);
    let mut m = m0.clone();
    let mut st = AdamState::new(&m);
    adam_step(&mut m, &g, &mut st, 1e-4, &OptimConfig::default());
    let (after, _) = loss_and_grad(&m, &x, 1);
    assert!(after < before, "{after} >= {before}");

    let mut twice = m0.clone();
    let mut st2 = AdamState::new(&twice);
    adam_step(&mut twice, &g, &mut st2, 1e-4, &OptimConfig::default());
    adam_step(&mut twice, &g, &mut st2, 1e-4, &OptimConfig::default());
    for ((a, b), c) in m0.tensors().iter().zip(m.tensors()).zip(twice.tensors()) {
        for ((p0, p1), p2) in a.data().iter().zip(b.data()).zip(c.data()) {
            let (d1, d2) = (p1 - p0, p2 - p1);
            assert!(d1 * d2 >= 0.0, "steps disagree in sign");
        }
    }
}

#[test]
fn zero_learning_rate_leaves_the_initial_model() {
    let (_, manifest) = dataset();
    let cfg = ModelConfig::tiny(2);
    let optim = OptimConfig {
        lr0: 0.0,
        ..one_epoch()
    };
    let out = train(manifest, &cfg, &LossConfig::ce(), &optim, &seg(), &options("lr0", 4)).unwrap();
    assert_eq!(out.final_model, ModelParams::init(&cfg, 4));
    assert_eq!(out.epochs.len(), 1);
}

#[test]
fn identical_seeds_train_identically_and_checkpoints_round_trip() {
    let (_, manifest) = dataset();
    let cfg = ModelConfig::tiny(2);
    let a = train(
        manifest,
        &cfg,
        &LossConfig::ce(),
        &one_epoch(),
        &seg(),
        &options("det_a", 9),
    )
    .unwrap();
    let b = train(
        manifest,
        &cfg,
        &LossConfig::ce(),
        &one_epoch(),
        &seg(),
        &options("det_b", 9),
    )
    .unwrap();
    assert_eq!(a.checkpoint_sha256, b.checkpoint_sha256);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(std::fs::read(&a.metrics).unwrap(), std::fs::read(&b.metrics).unwrap());
    assert!(a.epochs[0].train_loss.is_finite() && (0.0..=1.0).contains(&a.epochs[0].val_auc));
    let restored = load_checkpoint(&a.checkpoint).unwrap();
    let mut rounded = a.final_model.clone();
    for t in rounded.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    assert_eq!(restored, rounded);
    assert_eq!(
        longscan::ssm::encode_checkpoint(&restored),
        std::fs::read(&a.checkpoint).unwrap()
    );
    assert_ne!(a.final_model, ModelParams::init(&cfg, 9));
}

#[test]
fn degenerate_splits_are_rejected() {
    let (dir, manifest) = dataset();
    let cfg = ModelConfig::tiny(2);
    let mut no_val = manifest.clone();
    no_val.entries.retain(|e| e.split != Split::Validation);
    let err = train(
        &no_val,
        &cfg,
        &LossConfig::ce(),
        &one_epoch(),
        &seg(),
        &options("empty", 1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");

    let mut one_class = manifest.clone();
    one_class.entries.retain(|e| e.split != Split::Train || e.label == 0);
    let err = train(
        &one_class,
        &cfg,
        &LossConfig::ce(),
        &one_epoch(),
        &seg(),
        &options("oneclass", 1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DegenerateLabels(_)), "{err}");
    assert!(!dir.join("oneclass").join("best.ckpt").exists());
}
