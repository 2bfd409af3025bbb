//! Recording-level decisions from segment probabilities and transcripts.

mod fusion;
mod text;
mod vote;

pub use fusion::{
    default_lambda_grid, fuse, sweep_lambda, tune_top_k, LambdaRow, LambdaSweep, RecordingDecision, SegmentRef,
};
pub use text::{
    build_prompt, build_transcript, tokenize, transcript_for_entry, BowClassifier, BowConfig, CommandClient,
    CompletionClient, ExternalClassifier, TextClassifier, Transcript, TranscriptLine, TASK_DESCRIPTION,
};
pub use vote::{merge_3to2, segment_probs, selective_vote, SegmentPrediction, TopK};

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::pipeline::{FeatureStore, PreparedRecording};
use crate::ssm::ModelParams;

/// Segment predictions for one prepared recording.
pub fn recording_segment_probs(
    manifest: &Manifest,
    rec: &PreparedRecording,
    store: &FeatureStore,
    model: &ModelParams,
) -> Result<Vec<SegmentPrediction>> {
    let full = store.features(manifest, &rec.entry)?;
    let segments: Vec<_> = rec
        .segment_features(&full, model.config.min_frames())
        .into_iter()
        .map(|(i, f)| (rec.segments[i].start, rec.segments[i].end, f))
        .collect();
    if segments.is_empty() {
        return Err(Error::TooShort(format!(
            "{}: no segment with at least {} frames",
            rec.entry.recording_id,
            model.config.min_frames()
        )));
    }
    segment_probs(&segments, model)
}

/// [`recording_segment_probs`] for every recording, in order.
pub fn all_segment_probs(
    manifest: &Manifest,
    recs: &[PreparedRecording],
    store: &FeatureStore,
    model: &ModelParams,
) -> Result<Vec<Vec<SegmentPrediction>>> {
    recs.iter()
        .map(|r| recording_segment_probs(manifest, r, store, model))
        .collect()
}

/// Recording probabilities by selective vote.
pub fn vote_all(preds: &[Vec<SegmentPrediction>], k: TopK) -> Result<Vec<Vec<f64>>> {
    preds.iter().map(|p| selective_vote(p, k).map(|v| v.0)).collect()
}
