use std::path::PathBuf;
use std::sync::OnceLock;

use longscan::audio::FbankConfig;
use longscan::eval::{
    bench_scaling, eval_model, eval_run, standard_ablations, BenchConfig, EvalOptions, MetricsTable, RowKind, System,
};
use longscan::infer::{BowClassifier, BowConfig, TopK};
use longscan::manifest::{Manifest, Split};
use longscan::pipeline::{FeatureStore, SegmentMethod, SegmentOptions};
use longscan::segment::{RoleFilter, SegmentFilter};
use longscan::ssm::{save_checkpoint, ModelConfig, ModelParams};
use longscan::synth::{generate_dataset, GenConfig};
use longscan::Error;

struct Fixture {
    dir: PathBuf,
    manifest: Manifest,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = GenConfig {
            duration: 30.0,
            ..GenConfig::new(2, 10, 8)
        };
        let manifest = generate_dataset(&cfg, dir.join("data")).unwrap();
        let checkpoint = dir.join("init.ckpt");
        save_checkpoint(&checkpoint, &ModelParams::init(&ModelConfig::tiny(2), 1)).unwrap();
        Fixture {
            dir,
            manifest,
            checkpoint,
        }
    })
}

fn store() -> FeatureStore {
    FeatureStore::new(fixture().dir.join("features"), FbankConfig::default()).unwrap()
}

fn options() -> EvalOptions {
    EvalOptions {
        seg: SegmentOptions {
            method: SegmentMethod::Diarization,
            max_segment_dur: 20.0,
            ..SegmentOptions::default()
        },
        duration_caps: vec![5.0, 10.0, 20.0],
        ablations: standard_ablations(),
        ..EvalOptions::default()
    }
}

fn run(text: Option<&BowClassifier>) -> MetricsTable {
    let f = fixture();
    let t = text.map(|t| t as &dyn longscan::infer::TextClassifier);
    eval_run(&f.manifest, Split::Test, &f.checkpoint, &store(), t, &options())
        .unwrap()
        .table
}

#[test]
fn missing_checkpoint_is_an_error() {
    let f = fixture();
    let err = eval_run(
        &f.manifest,
        Split::Test,
        &f.dir.join("absent.ckpt"),
        &store(),
        None,
        &options(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
}

#[test]
fn table_has_every_row_and_is_reproducible() {
    let f = fixture();
    let train: Vec<_> = f.manifest.split(Split::Train);
    let bow = BowClassifier::fit_entries(&train, 2, BowConfig::default()).unwrap();
    let a = run(Some(&bow));
    let b = run(Some(&bow));
    assert_eq!(a, b);
    assert_eq!(a.recordings, 2);
    for s in [System::Audio, System::Text, System::Fused] {
        let r = a.row(RowKind::Primary, s).unwrap();
        assert!(r.auc.is_some_and(|v| (0.0..=1.0).contains(&v)));
    }
    assert_eq!(a.row(RowKind::Primary, System::Fused).unwrap().lambda, Some(0.5));
    assert_eq!(a.lambda_sweep.as_ref().unwrap().rows.len(), 11);

    let caps: Vec<_> = a.rows.iter().filter(|r| r.kind == RowKind::DurationCap).collect();
    assert_eq!(
        caps.iter().map(|r| r.max_segment_dur).collect::<Vec<_>>(),
        [5.0, 10.0, 20.0]
    );
    for w in caps.windows(2) {
        assert!(w[1].best_auc >= w[0].best_auc);
    }
    let ablations: Vec<_> = a.rows.iter().filter(|r| r.kind == RowKind::Ablation).collect();
    assert_eq!(ablations.len(), 6);
    let participant = ablations
        .iter()
        .find(|r| r.roles == RoleFilter::Participant && r.include_silence)
        .unwrap();
    assert!(
        participant.auc.is_some_and(|v| (0.0..=1.0).contains(&v)),
        "{participant:?}"
    );

    let csv = f.dir.join("metrics.csv");
    a.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + a.rows.len());
    a.write_json(f.dir.join("metrics.json")).unwrap();
}

#[test]
fn decisions_cover_each_recording_and_respect_k() {
    let f = fixture();
    let model = ModelParams::init(&ModelConfig::tiny(2), 1);
    let opts = EvalOptions {
        top_k: TopK::K(1),
        duration_caps: vec![],
        ..options()
    };
    let out = eval_model(&f.manifest, Split::Test, &model, &store(), None, &opts).unwrap();
    assert_eq!(out.decisions.len(), 2);
    for d in &out.decisions {
        assert_eq!(d.selected_segments.len(), 1);
        assert!((d.p_fused.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(out.table.row(RowKind::Primary, System::Text).is_none());
}

#[test]
fn bad_options_are_rejected() {
    let f = fixture();
    let model = ModelParams::init(&ModelConfig::tiny(2), 1);
    for opts in [
        EvalOptions {
            lambda: 1.5,
            ..options()
        },
        EvalOptions {
            top_k: TopK::K(0),
            ..options()
        },
        EvalOptions {
            duration_caps: vec![-1.0],
            ..options()
        },
    ] {
        assert!(eval_model(&f.manifest, Split::Test, &model, &store(), None, &opts).is_err());
    }
    let wrong = ModelParams::init(
        &ModelConfig {
            n_mels: 64,
            ..ModelConfig::tiny(2)
        },
        1,
    );
    assert!(eval_model(&f.manifest, Split::Test, &wrong, &store(), None, &options()).is_err());
    let interviewer_only = EvalOptions {
        seg: SegmentOptions {
            filter: SegmentFilter {
                roles: RoleFilter::Interviewer,
                include_silence: false,
            },
            ..options().seg
        },
        ..options()
    };
    // Interviewer-only still has turns, so the run succeeds.
    assert!(eval_model(&f.manifest, Split::Test, &model, &store(), None, &interviewer_only).is_ok());
}

#[test]
fn small_bench_reports_both_series() {
    let cfg = BenchConfig {
        ssm_lengths: vec![256, 512, 1024],
        attention_lengths: vec![256, 512, 1024],
        runs: 5,
        warmup: 0,
        ..BenchConfig::default()
    };
    let r = bench_scaling(&cfg).unwrap();
    assert_eq!(r.workers, 1);
    for name in ["ssm", "attention"] {
        let s = r.series(name).unwrap();
        assert_eq!(s.lengths, [256, 512, 1024]);
        assert!(s.wall_times.iter().all(|&t| t > 0.0));
        assert!(s.slope.is_some());
    }
    let starved = BenchConfig {
        attention_memory_budget: 1,
        ..cfg
    };
    let r = bench_scaling(&starved).unwrap();
    assert_eq!(r.series("attention").unwrap().failures.len(), 3);
    assert!(r.series("attention").unwrap().slope.is_none());
}
