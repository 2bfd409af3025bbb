mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use longscan::eval::{bench_scaling, doubling, eval_model, infer_split, tune_on_validation, write_jsonl};
use longscan::infer::{BowClassifier, TextClassifier, TopK};
use longscan::manifest::{Manifest, Split};
use longscan::par;
use longscan::pipeline::{load_waveform, segment_recording, FeatureStore};
use longscan::segment::{RoleFilter, SegmentRecord};
use longscan::ssm::{grad_check, load_checkpoint};
use longscan::synth::generate_dataset;
use longscan::train::{train, TrainOptions};

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "longscan",
    version,
    about = "Long-recording audio classification with selective state-space models"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Segment length cap in seconds.
    #[arg(long, global = true)]
    max_segment_dur: Option<f64>,
    /// Segments kept by the recording vote: a positive integer or `all`.
    #[arg(long, global = true)]
    top_k: Option<TopK>,
    /// Weight of the text probabilities in late fusion.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    roles: Option<RoleFilter>,
    #[arg(long, global = true, value_enum)]
    include_silence: Option<Switch>,
    /// Duration caps for the eval sweep, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    duration_cap: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Branch {
    Audio,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset: WAV files plus manifest.jsonl.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        /// Seconds per recording.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Segment every recording of a split and write one JSON line per segment.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Train the audio model or the bag-of-words text classifier.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "audio")]
        branch: Branch,
    },
    /// Write recording decisions for a split as JSON lines.
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bag-of-words model from `train --branch text`.
        #[arg(long)]
        text_model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics table (CSV and JSON), decisions and sweeps for a split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text_model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Runtime and memory scaling of the backbone against an attention baseline.
    Bench {
        /// Output directory for bench.json and bench.dat.
        #[arg(long)]
        out: PathBuf,
        /// Backbone lengths as `lo..hi`, doubling.
        #[arg(long)]
        lengths: Option<Span>,
        #[arg(long)]
        attention_lengths: Option<Span>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `lo..hi` length range.
#[derive(Clone, Copy, Debug)]
struct Span(usize, usize);

impl std::str::FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (lo, hi) = s
            .split_once("..")
            .ok_or_else(|| format!("expected lo..hi, got {s:?}"))?;
        let lo = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
        let hi = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
        if lo == 0 || lo > hi {
            return Err(format!("empty or invalid range {s:?}"));
        }
        Ok(Span(lo, hi))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        workers: g.workers,
        max_segment_dur: g.max_segment_dur,
        top_k: g.top_k,
        lambda: g.lambda,
        roles: g.roles,
        include_silence: g.include_silence.map(|s| matches!(s, Switch::On)),
        duration_caps: g.duration_cap.clone(),
    };
    let mut cfg = RunConfig::load(g.config.as_deref(), &overrides)?;
    if let Command::Generate {
        classes,
        per_class,
        duration,
        ..
    } = &cli.command
    {
        cfg.classes = classes.unwrap_or(cfg.classes);
        cfg.generate.per_class = per_class.unwrap_or(cfg.generate.per_class);
        cfg.generate.duration = duration.unwrap_or(cfg.generate.duration);
        cfg.validate()?;
    }
    if let Command::Bench {
        lengths,
        attention_lengths,
        runs,
        ..
    } = &cli.command
    {
        if let Some(Span(lo, hi)) = lengths {
            cfg.bench.ssm_lengths = doubling(*lo, *hi);
        }
        if let Some(Span(lo, hi)) = attention_lengths {
            cfg.bench.attention_lengths = doubling(*lo, *hi);
        }
        cfg.bench.runs = runs.unwrap_or(cfg.bench.runs);
        cfg.validate()?;
    }
    let workers = cfg.workers;
    par::with_workers(workers, move || dispatch(cli.command, &cfg))
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn feature_store(cfg: &RunConfig, manifest: &Manifest) -> Result<FeatureStore> {
    Ok(FeatureStore::new(cfg.feature_dir(manifest.root()), cfg.fbank.clone())?)
}

fn load_text_model(path: Option<&Path>, classes: usize) -> Result<Option<BowClassifier>> {
    let Some(p) = path else { return Ok(None) };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let bow: BowClassifier = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    if bow.classes() != classes {
        bail!("text model has {} classes, config has {classes}", bow.classes());
    }
    Ok(Some(bow))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Generate { out, .. } => {
            let m = generate_dataset(&cfg.gen_config(), &out)?;
            println!("wrote {} recordings to {}", m.entries.len(), out.display());
        }
        Command::Segment { manifest, out, split } => {
            let m = load_manifest(&manifest)?;
            let entries: Vec<_> = match split {
                Some(s) => m.split(s),
                None => m.entries.iter().collect(),
            };
            let per_recording = par::try_map(&entries, |e| -> longscan::Result<Vec<SegmentRecord>> {
                let wave = load_waveform(&m, e)?;
                let segs = segment_recording(e, &wave, &cfg.segment)?;
                Ok(segs.iter().map(|s| SegmentRecord::new(&e.recording_id, s)).collect())
            })?;
            let records: Vec<SegmentRecord> = per_recording.into_iter().flatten().collect();
            write_jsonl(&out, &records)?;
            println!("wrote {} segments from {} recordings", records.len(), entries.len());
        }
        Command::Train { manifest, out, branch } => {
            let m = load_manifest(&manifest)?;
            match branch {
                Branch::Audio => {
                    let opts = TrainOptions {
                        feature_dir: Some(cfg.feature_dir(m.root())),
                        fbank: cfg.fbank.clone(),
                        val_top_k: cfg.eval.top_k,
                        ..TrainOptions::new(&out, cfg.seed)
                    };
                    let r = train(
                        &m,
                        &cfg.model_config()?,
                        &cfg.loss_config(),
                        &cfg.optim,
                        &cfg.segment,
                        &opts,
                    )?;
                    println!(
                        "best epoch {} val_auc {:.4} checkpoint {} sha256 {}",
                        r.best_epoch,
                        r.best_val_auc,
                        r.checkpoint.display(),
                        r.checkpoint_sha256
                    );
                }
                Branch::Text => {
                    create_dir(&out)?;
                    let bow = BowClassifier::fit_entries(&m.split(Split::Train), cfg.classes, cfg.text.clone())?;
                    let path = out.join("text_model.json");
                    write_json(&path, &bow)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Infer {
            manifest,
            checkpoint,
            text_model,
            split,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let model = load_checkpoint(&checkpoint)?;
            let bow = load_text_model(text_model.as_deref(), model.config.n_classes)?;
            let store = feature_store(cfg, &m)?;
            let decisions = infer_split(
                &m,
                split,
                &model,
                &store,
                bow.as_ref().map(|b| b as &dyn TextClassifier),
                &cfg.segment,
                cfg.eval.top_k,
                cfg.eval.lambda,
            )?;
            write_jsonl(&out, &decisions)?;
            println!("wrote {} decisions to {}", decisions.len(), out.display());
        }
        Command::Eval {
            manifest,
            checkpoint,
            text_model,
            split,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            if !checkpoint.exists() {
                bail!("checkpoint {} does not exist", checkpoint.display());
            }
            let model = load_checkpoint(&checkpoint)?;
            let bow = load_text_model(text_model.as_deref(), model.config.n_classes)?;
            let text = bow.as_ref().map(|b| b as &dyn TextClassifier);
            let store = feature_store(cfg, &m)?;
            create_dir(&out)?;
            let mut opts = cfg.eval_options();
            if cfg.eval.tune {
                let t = tune_on_validation(&m, &model, &store, &opts.seg, text, &cfg.eval.k_grid, &opts.lambda_grid)?;
                opts.top_k = t.top_k;
                if let Some(sweep) = &t.lambda {
                    opts.lambda = sweep.best_lambda;
                }
                write_json(&out.join("tuning.json"), &t)?;
            }
            let r = eval_model(&m, split, &model, &store, text, &opts)?;
            r.table.write_csv(out.join("metrics.csv"))?;
            r.table.write_json(out.join("metrics.json"))?;
            write_jsonl(out.join("decisions.jsonl"), &r.decisions)?;
            for row in r
                .table
                .rows
                .iter()
                .filter(|r| r.kind == longscan::eval::RowKind::Primary)
            {
                let auc = row.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
                println!("{:?} AUC {auc}", row.system);
            }
        }
        Command::Bench { out, .. } => {
            create_dir(&out)?;
            let r = bench_scaling(&cfg.bench)?;
            r.write_json(out.join("bench.json"))?;
            r.write_gnuplot(out.join("bench.dat"))?;
            for s in &r.series {
                let slope = s.slope.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                println!("{} slope {slope} ({} failures)", s.model, s.failures.len());
            }
        }
        Command::Gradcheck { out } => {
            let r = grad_check(&cfg.model_config()?, cfg.seed)?;
            if let Some(p) = out {
                write_json(&p, &r)?;
            }
            println!(
                "checked {} of {} parameters, max relative error {:.3e} ({})",
                r.checked, r.parameters, r.max_rel_error, r.worst
            );
            if r.non_finite || r.max_rel_error >= 1e-4 {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}
