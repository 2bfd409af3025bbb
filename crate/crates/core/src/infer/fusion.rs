use serde::{Deserialize, Serialize};

use super::vote::{selective_vote, SegmentPrediction, TopK};
use crate::error::{Error, Result};
use crate::eval::recording_auc;

/// `(1 − λ)·p_audio + λ·p_text`.
pub fn fuse(p_audio: &[f64], p_text: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("fusion weight {lambda} outside [0, 1]")));
    }
    if p_audio.len() != p_text.len() {
        return Err(Error::Shape("audio and text probabilities differ in length".into()));
    }
    Ok(p_audio
        .iter()
        .zip(p_text)
        .map(|(a, t)| (1.0 - lambda) * a + lambda * t)
        .collect())
}

/// 0.0, 0.1, …, 1.0
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub rows: Vec<LambdaRow>,
    pub best_lambda: f64,
    pub best_auc: f64,
}

/// Fused recording AUC for each λ in `grid`; the best λ is the smallest one
/// reaching the maximum.
pub fn sweep_lambda(p_audio: &[Vec<f64>], p_text: &[Vec<f64>], labels: &[usize], grid: &[f64]) -> Result<LambdaSweep> {
    if p_audio.len() != p_text.len() || p_audio.len() != labels.len() {
        return Err(Error::Shape("sweep inputs differ in length".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty λ grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let fused = p_audio
            .iter()
            .zip(p_text)
            .map(|(a, t)| fuse(a, t, lambda))
            .collect::<Result<Vec<_>>>()?;
        rows.push(LambdaRow {
            lambda,
            auc: recording_auc(&fused, labels)?,
        });
    }
    let best = rows
        .iter()
        .fold(&rows[0], |best, r| if r.auc > best.auc { r } else { best });
    Ok(LambdaSweep {
        best_lambda: best.lambda,
        best_auc: best.auc,
        rows,
    })
}

/// Picks the vote size with the highest recording AUC; ties go to the
/// earlier grid entry.
pub fn tune_top_k(preds: &[Vec<SegmentPrediction>], labels: &[usize], grid: &[TopK]) -> Result<(TopK, f64)> {
    let mut best: Option<(TopK, f64)> = None;
    for &k in grid {
        let probs = preds
            .iter()
            .map(|p| selective_vote(p, k).map(|v| v.0))
            .collect::<Result<Vec<_>>>()?;
        let auc = recording_auc(&probs, labels)?;
        if best.is_none_or(|(_, b)| auc > b) {
            best = Some((k, auc));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("empty top-k grid".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub start: f64,
    pub end: f64,
}

/// One line of the decision JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingDecision {
    pub recording_id: String,
    pub p_audio: Vec<f64>,
    pub p_text: Option<Vec<f64>>,
    pub lambda: f64,
    pub p_fused: Vec<f64>,
    pub selected_segments: Vec<SegmentRef>,
    pub label: Option<usize>,
}

impl RecordingDecision {
    pub fn new(
        recording_id: impl Into<String>,
        p_audio: Vec<f64>,
        p_text: Option<Vec<f64>>,
        lambda: f64,
        selected_segments: Vec<SegmentRef>,
        label: Option<usize>,
    ) -> Result<Self> {
        let p_fused = match &p_text {
            Some(t) => fuse(&p_audio, t, lambda)?,
            None => p_audio.clone(),
        };
        Ok(Self {
            recording_id: recording_id.into(),
            p_audio,
            p_text,
            lambda,
            p_fused,
            selected_segments,
            label,
        })
    }
}
