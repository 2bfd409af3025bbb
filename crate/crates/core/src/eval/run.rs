//! Recording-level evaluation of a checkpoint on one split: audio, text and
//! fused AUC plus duration-cap and segment-filter ablations.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auc::recording_auc;
use crate::error::{Error, Result};
use crate::infer::{
    all_segment_probs, default_lambda_grid, selective_vote, sweep_lambda, transcript_for_entry, tune_top_k,
    LambdaSweep, RecordingDecision, SegmentPrediction, SegmentRef, TextClassifier, TopK,
};
use crate::manifest::{Manifest, ManifestEntry, Split};
use crate::pipeline::{prepare_recordings, FeatureStore, PreparedRecording, SegmentOptions};
use crate::segment::{RoleFilter, SegmentFilter};
use crate::ssm::{load_checkpoint, ModelParams};
use crate::synth::class_names;

/// Segment caps swept by default, in seconds.
pub fn default_duration_caps() -> Vec<f64> {
    vec![30.0, 60.0, 120.0, 180.0, 240.0, 300.0, 360.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub seg: SegmentOptions,
    pub top_k: TopK,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    /// Empty disables the duration sweep.
    pub duration_caps: Vec<f64>,
    /// Extra audio-only runs with these segment filters.
    pub ablations: Vec<SegmentFilter>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seg: SegmentOptions::default(),
            top_k: TopK::All,
            lambda: 0.5,
            lambda_grid: default_lambda_grid(),
            duration_caps: default_duration_caps(),
            ablations: Vec::new(),
        }
    }
}

/// The role/silence grid: both roles, participant only, interviewer only,
/// each with and without silence.
pub fn standard_ablations() -> Vec<SegmentFilter> {
    let mut v = Vec::new();
    for roles in [RoleFilter::Both, RoleFilter::Participant, RoleFilter::Interviewer] {
        for include_silence in [true, false] {
            v.push(SegmentFilter { roles, include_silence });
        }
    }
    v
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        self.seg.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!(
                "fusion weight {} outside [0, 1]",
                self.lambda
            )));
        }
        if let TopK::K(0) = self.top_k {
            return Err(Error::InvalidInput("top-k must be at least 1".into()));
        }
        if self.duration_caps.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidInput("duration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Primary,
    DurationCap,
    Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Audio,
    Text,
    Fused,
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub kind: RowKind,
    pub system: System,
    pub roles: RoleFilter,
    pub include_silence: bool,
    pub max_segment_dur: f64,
    pub top_k: TopK,
    pub lambda: Option<f64>,
    /// Missing when the configuration left a recording without segments.
    pub auc: Option<f64>,
    /// Highest AUC over this and all smaller duration caps.
    pub best_auc: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub split: Split,
    pub recordings: usize,
    pub rows: Vec<MetricRow>,
    /// Fused AUC over the λ grid on this split.
    pub lambda_sweep: Option<LambdaSweep>,
}

impl MetricsTable {
    pub fn row(&self, kind: RowKind, system: System) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.kind == kind && r.system == system)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub table: MetricsTable,
    pub decisions: Vec<RecordingDecision>,
}

fn split_entries(manifest: &Manifest, split: Split) -> Result<Vec<&ManifestEntry>> {
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("{} split is empty", split.as_str())));
    }
    Ok(entries)
}

fn check_features(store: &FeatureStore, model: &ModelParams) -> Result<()> {
    let have = store.fbank_config().n_mels;
    if have != model.config.n_mels {
        return Err(Error::InvalidInput(format!(
            "model expects {} mel bins, features have {have}",
            model.config.n_mels
        )));
    }
    Ok(())
}

fn audio_predictions(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    seg: &SegmentOptions,
    store: &FeatureStore,
    model: &ModelParams,
) -> Result<(Vec<PreparedRecording>, Vec<Vec<SegmentPrediction>>)> {
    let recs = prepare_recordings(manifest, entries, seg, store)?;
    let preds = all_segment_probs(manifest, &recs, store, model)?;
    Ok((recs, preds))
}

fn audio_auc(preds: &[Vec<SegmentPrediction>], labels: &[usize], k: TopK) -> Result<f64> {
    let probs = preds
        .iter()
        .map(|p| selective_vote(p, k).map(|v| v.0))
        .collect::<Result<Vec<_>>>()?;
    recording_auc(&probs, labels)
}

/// Text probabilities for each entry in order.
pub fn text_probs(entries: &[&ManifestEntry], text: &dyn TextClassifier, classes: usize) -> Result<Vec<Vec<f64>>> {
    let names = class_names(classes);
    entries
        .iter()
        .map(|e| text.predict(&transcript_for_entry(e)?, names))
        .collect()
}

/// Vote size and fusion weight picked on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub top_k: TopK,
    pub top_k_auc: f64,
    pub lambda: Option<LambdaSweep>,
}

/// Tunes `k` over `k_grid` and, with a text classifier, λ over `lambda_grid`
/// on the validation split.
pub fn tune_on_validation(
    manifest: &Manifest,
    model: &ModelParams,
    store: &FeatureStore,
    seg: &SegmentOptions,
    text: Option<&dyn TextClassifier>,
    k_grid: &[TopK],
    lambda_grid: &[f64],
) -> Result<Tuning> {
    check_features(store, model)?;
    let entries = split_entries(manifest, Split::Validation)?;
    let labels: Vec<usize> = entries.iter().map(|e| e.label).collect();
    let (_, preds) = audio_predictions(manifest, &entries, seg, store, model)?;
    let (top_k, top_k_auc) = tune_top_k(&preds, &labels, k_grid)?;
    let lambda = match text {
        Some(t) => {
            let pa = preds
                .iter()
                .map(|p| selective_vote(p, top_k).map(|v| v.0))
                .collect::<Result<Vec<_>>>()?;
            let pt = text_probs(&entries, t, model.config.n_classes)?;
            Some(sweep_lambda(&pa, &pt, &labels, lambda_grid)?)
        }
        None => None,
    };
    Ok(Tuning {
        top_k,
        top_k_auc,
        lambda,
    })
}

fn row(kind: RowKind, system: System, seg: &SegmentOptions, top_k: TopK) -> MetricRow {
    MetricRow {
        kind,
        system,
        roles: seg.filter.roles,
        include_silence: seg.filter.include_silence,
        max_segment_dur: seg.max_segment_dur,
        top_k,
        lambda: None,
        auc: None,
        best_auc: None,
        note: String::new(),
    }
}

struct Decisions {
    p_audio: Vec<Vec<f64>>,
    p_text: Option<Vec<Vec<f64>>>,
    decisions: Vec<RecordingDecision>,
}

#[allow(clippy::too_many_arguments)]
fn decide(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    model: &ModelParams,
    store: &FeatureStore,
    text: Option<&dyn TextClassifier>,
    seg: &SegmentOptions,
    k: TopK,
    lambda: f64,
) -> Result<Decisions> {
    let (recs, preds) = audio_predictions(manifest, entries, seg, store, model)?;
    let mut p_audio = Vec::with_capacity(preds.len());
    let mut selected = Vec::with_capacity(preds.len());
    for p in &preds {
        let (probs, idx) = selective_vote(p, k)?;
        p_audio.push(probs);
        selected.push(
            idx.into_iter()
                .map(|i| SegmentRef {
                    start: p[i].start,
                    end: p[i].end,
                })
                .collect::<Vec<_>>(),
        );
    }
    let p_text = match text {
        Some(t) => Some(text_probs(entries, t, model.config.n_classes)?),
        None => None,
    };
    let decisions = recs
        .iter()
        .zip(&p_audio)
        .zip(selected)
        .enumerate()
        .map(|(i, ((rec, pa), sel))| {
            RecordingDecision::new(
                rec.entry.recording_id.clone(),
                pa.clone(),
                p_text.as_ref().map(|pt| pt[i].clone()),
                lambda,
                sel,
                Some(rec.entry.label),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Decisions {
        p_audio,
        p_text,
        decisions,
    })
}

/// Recording decisions for `split` without computing any metric, so a split
/// holding a single class is fine.
#[allow(clippy::too_many_arguments)]
pub fn infer_split(
    manifest: &Manifest,
    split: Split,
    model: &ModelParams,
    store: &FeatureStore,
    text: Option<&dyn TextClassifier>,
    seg: &SegmentOptions,
    k: TopK,
    lambda: f64,
) -> Result<Vec<RecordingDecision>> {
    seg.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("fusion weight {lambda} outside [0, 1]")));
    }
    check_features(store, model)?;
    let entries = split_entries(manifest, split)?;
    Ok(decide(manifest, &entries, model, store, text, seg, k, lambda)?.decisions)
}

/// Evaluates `checkpoint` on `split`.
pub fn eval_run(
    manifest: &Manifest,
    split: Split,
    checkpoint: &Path,
    store: &FeatureStore,
    text: Option<&dyn TextClassifier>,
    opts: &EvalOptions,
) -> Result<EvalOutput> {
    if !checkpoint.exists() {
        return Err(Error::Checkpoint(format!("{} does not exist", checkpoint.display())));
    }
    let model = load_checkpoint(checkpoint)?;
    eval_model(manifest, split, &model, store, text, opts)
}

/// [`eval_run`] with parameters already in memory.
pub fn eval_model(
    manifest: &Manifest,
    split: Split,
    model: &ModelParams,
    store: &FeatureStore,
    text: Option<&dyn TextClassifier>,
    opts: &EvalOptions,
) -> Result<EvalOutput> {
    opts.validate()?;
    check_features(store, model)?;
    let entries = split_entries(manifest, split)?;
    let labels: Vec<usize> = entries.iter().map(|e| e.label).collect();
    let k = opts.top_k;
    let mut rows = Vec::new();

    let Decisions {
        p_audio,
        p_text,
        decisions,
    } = decide(manifest, &entries, model, store, text, &opts.seg, k, opts.lambda)?;
    let mut audio = row(RowKind::Primary, System::Audio, &opts.seg, k);
    audio.auc = Some(recording_auc(&p_audio, &labels)?);
    rows.push(audio);

    let mut lambda_sweep = None;
    if let Some(pt) = &p_text {
        let mut r = row(RowKind::Primary, System::Text, &opts.seg, k);
        r.auc = Some(recording_auc(pt, &labels)?);
        r.note = "transcript only".into();
        rows.push(r);
        lambda_sweep = Some(sweep_lambda(&p_audio, pt, &labels, &opts.lambda_grid)?);
    }

    if p_text.is_some() {
        let fused: Vec<Vec<f64>> = decisions.iter().map(|d| d.p_fused.clone()).collect();
        let mut r = row(RowKind::Primary, System::Fused, &opts.seg, k);
        r.lambda = Some(opts.lambda);
        r.auc = Some(recording_auc(&fused, &labels)?);
        rows.push(r);
    }

    let mut caps = opts.duration_caps.clone();
    caps.sort_by(f64::total_cmp);
    caps.dedup();
    let mut best: Option<f64> = None;
    for cap in caps {
        let seg = SegmentOptions {
            max_segment_dur: cap,
            ..opts.seg.clone()
        };
        let (_, p) = audio_predictions(manifest, &entries, &seg, store, model)?;
        let auc = audio_auc(&p, &labels, k)?;
        best = Some(best.map_or(auc, |b| b.max(auc)));
        let mut r = row(RowKind::DurationCap, System::Audio, &seg, k);
        r.auc = Some(auc);
        r.best_auc = best;
        rows.push(r);
    }

    for filter in &opts.ablations {
        let seg = SegmentOptions {
            filter: *filter,
            ..opts.seg.clone()
        };
        let mut r = row(RowKind::Ablation, System::Audio, &seg, k);
        match audio_predictions(manifest, &entries, &seg, store, model) {
            Ok((_, p)) => r.auc = Some(audio_auc(&p, &labels, k)?),
            Err(Error::TooShort(msg)) | Err(Error::InvalidInput(msg)) => r.note = msg,
            Err(e) => return Err(e),
        }
        rows.push(r);
    }

    Ok(EvalOutput {
        table: MetricsTable {
            split,
            recordings: entries.len(),
            rows,
            lambda_sweep,
        },
        decisions,
    })
}
