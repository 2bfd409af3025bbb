use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss, LossConfig};
use super::optim::{adam_step, lr_at, AdamState, OptimConfig, StepOutcome};
use crate::audio::FbankConfig;
use crate::error::{Error, Result};
use crate::eval::recording_auc;
use crate::infer::{all_segment_probs, vote_all, TopK};
use crate::manifest::{Manifest, ManifestEntry, Split};
use crate::pipeline::{prepare_recordings, FeatureStore, PreparedRecording, SegmentOptions};
use crate::ssm::{
    backbone_backward, backbone_forward_train, file_sha256, save_checkpoint, ModelConfig, ModelParams, ParamSet,
};
use crate::synth::splitmix64;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    /// Receives `best.ckpt` and `metrics.jsonl`.
    pub out_dir: PathBuf,
    /// Feature cache; defaults to `out_dir/features`.
    pub feature_dir: Option<PathBuf>,
    pub fbank: FbankConfig,
    /// Vote used for the per-epoch validation AUC.
    pub val_top_k: TopK,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            seed,
            out_dir: out_dir.into(),
            feature_dir: None,
            fbank: FbankConfig::default(),
            val_top_k: TopK::All,
        }
    }

    pub fn feature_store(&self) -> Result<FeatureStore> {
        let dir = self
            .feature_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("features"));
        FeatureStore::new(dir, self.fbank.clone())
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
    /// Mean negative log-likelihood of the validation segments.
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub best_val_loss: f64,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub metrics: PathBuf,
    pub epochs: Vec<EpochMetrics>,
    /// Parameters after the last epoch.
    pub final_model: ModelParams,
}

fn check_split(entries: &[&ManifestEntry], split: Split, classes: usize) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("{} split is empty", split.as_str())));
    }
    if let Some(e) = entries.iter().find(|e| e.label >= classes) {
        return Err(Error::InvalidInput(format!(
            "{}: label {} out of range for {classes} classes",
            e.recording_id, e.label
        )));
    }
    let first = entries[0].label;
    if entries.iter().all(|e| e.label == first) {
        return Err(Error::DegenerateLabels(format!(
            "{} split contains only class {first}",
            split.as_str()
        )));
    }
    Ok(())
}

struct Validation {
    auc: f64,
    loss: f64,
}

fn validate(
    manifest: &Manifest,
    recs: &[PreparedRecording],
    store: &FeatureStore,
    model: &ModelParams,
    k: TopK,
) -> Result<Validation> {
    let preds = all_segment_probs(manifest, recs, store, model)?;
    let labels: Vec<usize> = recs.iter().map(|r| r.entry.label).collect();
    let auc = recording_auc(&vote_all(&preds, k)?, &labels)?;
    let mut nll = 0.0;
    let mut n = 0usize;
    for (p, r) in preds.iter().zip(recs) {
        for s in p {
            nll -= s.probs[r.entry.label].max(f64::MIN_POSITIVE).ln();
            n += 1;
        }
    }
    Ok(Validation {
        auc,
        loss: nll / n as f64,
    })
}

/// Segment-level training with per-epoch validation. The checkpoint with the
/// best validation AUC (ties: lower validation loss, then earlier epoch) is
/// written to `out_dir/best.ckpt`.
pub fn train(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    optim: &OptimConfig,
    seg: &SegmentOptions,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    loss_cfg.validate(model_cfg.n_classes)?;
    optim.validate()?;
    seg.validate()?;
    manifest.validate()?;
    if model_cfg.n_mels != opts.fbank.n_mels {
        return Err(Error::InvalidInput(format!(
            "model expects {} mel bins, features have {}",
            model_cfg.n_mels, opts.fbank.n_mels
        )));
    }
    let train_entries = manifest.split(Split::Train);
    let val_entries = manifest.split(Split::Validation);
    check_split(&train_entries, Split::Train, model_cfg.n_classes)?;
    check_split(&val_entries, Split::Validation, model_cfg.n_classes)?;

    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let store = opts.feature_store()?;
    let train_recs = prepare_recordings(manifest, &train_entries, seg, &store)?;
    let val_recs = prepare_recordings(manifest, &val_entries, seg, &store)?;

    let min_frames = model_cfg.min_frames();
    let mut examples = Vec::new();
    for (ri, rec) in train_recs.iter().enumerate() {
        let full = store.features(manifest, &rec.entry)?;
        for (si, _) in rec.segment_features(&full, min_frames) {
            examples.push((ri, si));
        }
    }
    if examples.is_empty() {
        return Err(Error::TooShort(
            "no training segment is long enough for the model".into(),
        ));
    }
    log::info!(
        "training on {} segments from {} recordings, validating on {}",
        examples.len(),
        train_recs.len(),
        val_recs.len()
    );

    let mut model = ModelParams::init(model_cfg, opts.seed);
    let mut adam = AdamState::new(&model);
    let checkpoint = opts.out_dir.join("best.ckpt");
    let metrics_path = opts.out_dir.join("metrics.jsonl");
    let mut metrics_file = std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;

    let mut step = 0usize;
    let mut history = Vec::with_capacity(optim.epochs);
    let mut best: Option<(f64, f64, usize)> = None;
    for epoch in 0..optim.epochs {
        let mut order = examples.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(opts.seed ^ splitmix64(epoch as u64)));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut lr = lr_at(step, epoch, optim);
        for batch in order.chunks(optim.batch_size) {
            let mut grads = model.zeroed();
            for &(ri, si) in batch {
                let rec = &train_recs[ri];
                let full = store.features(manifest, &rec.entry)?;
                let f = full.gather_spans(&rec.segments[si].spans());
                let (logits, act) = backbone_forward_train(&f, &model)?;
                let (value, dlogits) = loss(&logits, rec.entry.label, loss_cfg)?;
                loss_sum += value;
                let g = backbone_backward(&act, &model, &dlogits)?;
                let scale = 1.0 / batch.len() as f64;
                for (acc, t) in grads.tensors_mut().into_iter().zip(g.tensors()) {
                    for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                        *a += scale * v;
                    }
                }
            }
            lr = lr_at(step, epoch, optim);
            if adam_step(&mut model, &grads, &mut adam, lr, optim) == StepOutcome::Skipped {
                log::warn!("epoch {epoch}: step {step} skipped");
            }
            step += 1;
        }

        let v = validate(manifest, &val_recs, &store, &model, opts.val_top_k)?;
        let m = EpochMetrics {
            epoch,
            step,
            lr,
            train_loss: loss_sum / order.len() as f64,
            val_auc: v.auc,
            val_loss: v.loss,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_auc {:.4} val_loss {:.4} lr {:.2e}",
            m.train_loss,
            m.val_auc,
            m.val_loss,
            m.lr
        );
        writeln!(metrics_file, "{}", serde_json::to_string(&m)?).map_err(|e| Error::io(&metrics_path, e))?;
        let better = match best {
            None => true,
            Some((auc, loss, _)) => v.auc > auc || (v.auc == auc && v.loss < loss),
        };
        if better {
            save_checkpoint(&checkpoint, &model)?;
            best = Some((v.auc, v.loss, epoch));
        }
        history.push(m);
    }
    metrics_file.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let (best_val_auc, best_val_loss, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_epoch,
        best_val_auc,
        best_val_loss,
        checkpoint_sha256: file_sha256(&checkpoint)?,
        checkpoint,
        metrics: metrics_path,
        epochs: history,
        final_model: model,
    })
}
