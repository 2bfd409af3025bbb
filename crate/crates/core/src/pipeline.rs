//! Recording → segments → feature matrices, shared by training, inference
//! and evaluation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{compute_fbank, read_fbank_cache, read_wav, write_fbank_cache, FbankConfig, FbankMatrix, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry};
use crate::segment::{
    assign_roles, energy_vad, merge_segments, oracle_diarize, Chunk, ChunkKind, Segment, SegmentFilter, SourceSpan,
    VadConfig,
};

/// Sample rate the feature pipeline accepts; resampling is not supported.
pub const EXPECTED_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMethod {
    /// Energy VAD chunks; no speaker roles.
    #[default]
    Vad,
    /// Annotated speaker turns with role assignment; the gaps between turns
    /// become silence chunks.
    Diarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentOptions {
    pub method: SegmentMethod,
    /// Seconds.
    pub max_segment_dur: f64,
    pub filter: SegmentFilter,
    pub vad: VadConfig,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            method: SegmentMethod::Vad,
            max_segment_dur: 360.0,
            filter: SegmentFilter::default(),
            vad: VadConfig::default(),
        }
    }
}

impl SegmentOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_segment_dur > 0.0 && self.max_segment_dur.is_finite()) {
            return Err(Error::InvalidInput("max_segment_dur must be positive".into()));
        }
        self.vad.validate()
    }
}

/// Reads a recording and rejects sample rates the features do not support.
pub fn load_waveform(manifest: &Manifest, entry: &ManifestEntry) -> Result<Waveform> {
    let wave = read_wav(manifest.wav_path(entry))?;
    if wave.sample_rate() != EXPECTED_SAMPLE_RATE {
        return Err(Error::WavFormat(format!(
            "{}: sample rate {} Hz, expected {EXPECTED_SAMPLE_RATE}",
            entry.recording_id,
            wave.sample_rate()
        )));
    }
    Ok(wave)
}

/// Source spans for a recording under the chosen method.
pub fn source_spans(entry: &ManifestEntry, wave: &Waveform, opts: &SegmentOptions) -> Result<Vec<SourceSpan>> {
    match opts.method {
        SegmentMethod::Vad => Ok(energy_vad(wave, &opts.vad)?
            .into_iter()
            .map(SourceSpan::Chunk)
            .collect()),
        SegmentMethod::Diarization => {
            let turns = assign_roles(&oracle_diarize(entry)?);
            let mut spans = Vec::with_capacity(2 * turns.len() + 1);
            let mut t = 0.0;
            for turn in turns {
                if turn.start > t {
                    spans.push(SourceSpan::Chunk(Chunk {
                        start: t,
                        end: turn.start,
                        kind: ChunkKind::Silence,
                    }));
                }
                t = turn.end;
                spans.push(SourceSpan::Turn(turn));
            }
            if wave.duration() > t {
                spans.push(SourceSpan::Chunk(Chunk {
                    start: t,
                    end: wave.duration(),
                    kind: ChunkKind::Silence,
                }));
            }
            Ok(spans)
        }
    }
}

pub fn segment_recording(entry: &ManifestEntry, wave: &Waveform, opts: &SegmentOptions) -> Result<Vec<Segment>> {
    opts.validate()?;
    let spans = source_spans(entry, wave, opts)?;
    merge_segments(&spans, opts.max_segment_dur, |s| opts.filter.accepts(s))
}

/// Log-mel features per recording, cached on disk as f32. Values are always
/// returned f32-rounded, so results do not depend on whether the cache was warm.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
    fbank: FbankConfig,
    tag: String,
}

impl FeatureStore {
    pub fn new(dir: impl Into<PathBuf>, fbank: FbankConfig) -> Result<Self> {
        let dir = dir.into();
        fbank.validate(EXPECTED_SAMPLE_RATE)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let digest = Sha256::digest(serde_json::to_vec(&fbank)?);
        let tag = hex::encode(&digest[..6]);
        Ok(Self { dir, fbank, tag })
    }

    pub fn fbank_config(&self) -> &FbankConfig {
        &self.fbank
    }

    fn path(&self, entry: &ManifestEntry) -> PathBuf {
        self.dir.join(format!("{}.{}.fbank", entry.recording_id, self.tag))
    }

    /// Features of a recording whose waveform is already loaded.
    pub fn features_for(&self, entry: &ManifestEntry, wave: &Waveform) -> Result<FbankMatrix> {
        let path = self.path(entry);
        if path.exists() {
            return read_fbank_cache(&path, self.fbank.frame_shift);
        }
        let f = compute_fbank(wave, &self.fbank)?;
        write_fbank_cache(&path, &f)?;
        read_fbank_cache(&path, self.fbank.frame_shift)
    }

    pub fn features(&self, manifest: &Manifest, entry: &ManifestEntry) -> Result<FbankMatrix> {
        let path = self.path(entry);
        if path.exists() {
            return read_fbank_cache(&path, self.fbank.frame_shift);
        }
        self.features_for(entry, &load_waveform(manifest, entry)?)
    }
}

/// A recording with its segments resolved.
#[derive(Debug, Clone)]
pub struct PreparedRecording {
    pub entry: ManifestEntry,
    pub segments: Vec<Segment>,
}

impl PreparedRecording {
    /// Feature matrices of the segments that are long enough for a model
    /// needing `min_frames`, paired with their segment index.
    pub fn segment_features(&self, full: &FbankMatrix, min_frames: usize) -> Vec<(usize, FbankMatrix)> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| (i, full.gather_spans(&s.spans())))
            .filter(|(_, f)| f.frames() >= min_frames)
            .collect()
    }
}

/// Loads, segments and caches features for `entries`, in parallel.
pub fn prepare_recordings(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    opts: &SegmentOptions,
    store: &FeatureStore,
) -> Result<Vec<PreparedRecording>> {
    opts.validate()?;
    crate::par::try_map(entries, |entry| {
        let wave = load_waveform(manifest, entry)?;
        store.features_for(entry, &wave)?;
        Ok(PreparedRecording {
            entry: (*entry).clone(),
            segments: segment_recording(entry, &wave, opts)?,
        })
    })
}
