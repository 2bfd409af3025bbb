//! Recording segmentation: energy VAD, diarization interface, speaker-role
//! assignment and bounded-length merging of consecutive spans.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::manifest::ManifestEntry;

const TIME_EPS: f64 = 1e-9;

/// Minimum duration of the turn that marks the interviewer.
pub const INTERVIEWER_MIN_TURN: f64 = 0.020;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkKind {
    Speech,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub start: f64,
    pub end: f64,
    pub kind: ChunkKind,
}

impl Chunk {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Interviewer,
    Participant,
    Unassigned,
}

impl Role {
    /// Transcript label for an assigned role.
    pub fn label(self) -> Option<&'static str> {
        match self {
            Role::Interviewer => Some("Interviewer"),
            Role::Participant => Some("Participant"),
            Role::Unassigned => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTurn {
    pub start: f64,
    pub end: f64,
    pub speaker_id: String,
    pub role: Role,
}

impl SpeakerTurn {
    pub fn new(start: f64, end: f64, speaker_id: impl Into<String>) -> Self {
        Self {
            start,
            end,
            speaker_id: speaker_id.into(),
            role: Role::Unassigned,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A merge input: either a VAD chunk or a diarized turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum SourceSpan {
    Chunk(Chunk),
    Turn(SpeakerTurn),
}

impl SourceSpan {
    pub fn start(&self) -> f64 {
        match self {
            SourceSpan::Chunk(c) => c.start,
            SourceSpan::Turn(t) => t.start,
        }
    }

    pub fn end(&self) -> f64 {
        match self {
            SourceSpan::Chunk(c) => c.end,
            SourceSpan::Turn(t) => t.end,
        }
    }

    pub fn kind(&self) -> ChunkKind {
        match self {
            SourceSpan::Chunk(c) => c.kind,
            SourceSpan::Turn(_) => ChunkKind::Speech,
        }
    }

    pub fn role(&self) -> Role {
        match self {
            SourceSpan::Chunk(_) => Role::Unassigned,
            SourceSpan::Turn(t) => t.role,
        }
    }

    fn clipped(&self, start: f64, end: f64) -> SourceSpan {
        let mut s = self.clone();
        match &mut s {
            SourceSpan::Chunk(c) => {
                c.start = start;
                c.end = end;
            }
            SourceSpan::Turn(t) => {
                t.start = start;
                t.end = end;
            }
        }
        s
    }
}

/// A bounded-length model input built from consecutive source spans.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub sources: Vec<SourceSpan>,
    pub roles: BTreeSet<Role>,
}

impl Segment {
    fn from_span(span: SourceSpan) -> Self {
        let mut roles = BTreeSet::new();
        roles.insert(span.role());
        Self {
            start: span.start(),
            end: span.end(),
            sources: vec![span],
            roles,
        }
    }

    fn push(&mut self, span: SourceSpan) {
        self.end = span.end();
        self.roles.insert(span.role());
        self.sources.push(span);
    }

    /// Wall-clock span.
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Time spans of the included sources, for feature gathering.
    pub fn spans(&self) -> Vec<(f64, f64)> {
        self.sources.iter().map(|s| (s.start(), s.end())).collect()
    }

    pub fn kind_label(&self) -> &'static str {
        let speech = self.sources.iter().any(|s| s.kind() == ChunkKind::Speech);
        let silence = self.sources.iter().any(|s| s.kind() == ChunkKind::Silence);
        match (speech, silence) {
            (true, false) => "speech",
            (false, true) => "silence",
            _ => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleFilter {
    #[default]
    Both,
    Participant,
    Interviewer,
}

impl FromStr for RoleFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(RoleFilter::Both),
            "participant" => Ok(RoleFilter::Participant),
            "interviewer" => Ok(RoleFilter::Interviewer),
            other => Err(Error::InvalidInput(format!("unknown role filter {other:?}"))),
        }
    }
}

impl fmt::Display for RoleFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoleFilter::Both => "both",
            RoleFilter::Participant => "participant",
            RoleFilter::Interviewer => "interviewer",
        })
    }
}

/// Which spans enter the merge: role restriction and silence inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentFilter {
    pub roles: RoleFilter,
    pub include_silence: bool,
}

impl Default for SegmentFilter {
    fn default() -> Self {
        Self {
            roles: RoleFilter::Both,
            include_silence: true,
        }
    }
}

impl SegmentFilter {
    pub fn accepts(&self, span: &SourceSpan) -> bool {
        if span.kind() == ChunkKind::Silence && !self.include_silence {
            return false;
        }
        match self.roles {
            RoleFilter::Both => true,
            RoleFilter::Participant => span.role() == Role::Participant,
            RoleFilter::Interviewer => span.role() == Role::Interviewer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VadConfig {
    /// Analysis frame, seconds.
    pub frame: f64,
    /// Speech when frame energy exceeds this multiple of the median energy.
    pub energy_threshold: f64,
    /// Silence runs shorter than this many frames between speech are bridged.
    pub hangover: usize,
    /// Speech runs shorter than this (seconds) are demoted to silence.
    pub min_speech: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame: 0.03,
            energy_threshold: 0.05,
            hangover: 10,
            min_speech: 0.1,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame > 0.0 && self.energy_threshold > 0.0 && self.hangover > 0 && self.min_speech > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput("VAD parameters must all be positive".into()))
        }
    }
}

/// Short-time energy VAD. Output alternates kinds and covers `[0, duration]`.
pub fn energy_vad(wave: &Waveform, cfg: &VadConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let sr = wave.sample_rate() as f64;
    let frame_len = ((cfg.frame * sr).round() as usize).max(1);
    let samples = wave.samples();
    let energies: Vec<f64> = samples
        .chunks(frame_len)
        .map(|f| f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64)
        .collect();
    let n = energies.len();

    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let threshold = cfg.energy_threshold * median;
    let mut speech: Vec<bool> = energies.iter().map(|&e| e > threshold).collect();

    // Bridge short interior gaps.
    let runs = runs_of(&speech);
    for &(a, b, is_speech) in &runs {
        if !is_speech && a > 0 && b < n && b - a < cfg.hangover {
            speech[a..b].iter_mut().for_each(|s| *s = true);
        }
    }
    // Demote short speech runs.
    let frame_secs = frame_len as f64 / sr;
    for (a, b, is_speech) in runs_of(&speech) {
        if is_speech && ((b - a) as f64 * frame_secs) < cfg.min_speech - TIME_EPS {
            speech[a..b].iter_mut().for_each(|s| *s = false);
        }
    }

    let end_time = |frame: usize| (frame * frame_len).min(samples.len()) as f64 / sr;
    Ok(runs_of(&speech)
        .into_iter()
        .map(|(a, b, is_speech)| Chunk {
            start: end_time(a),
            end: end_time(b),
            kind: if is_speech {
                ChunkKind::Speech
            } else {
                ChunkKind::Silence
            },
        })
        .collect())
}

fn runs_of(flags: &[bool]) -> Vec<(usize, usize, bool)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=flags.len() {
        if i == flags.len() || flags[i] != flags[start] {
            runs.push((start, i, flags[start]));
            start = i;
        }
    }
    runs
}

/// The first speaker with a turn longer than 20 ms is the interviewer; every
/// other speaker is a participant.
pub fn assign_roles(turns: &[SpeakerTurn]) -> Vec<SpeakerTurn> {
    let interviewer = turns
        .iter()
        .find(|t| t.duration() > INTERVIEWER_MIN_TURN)
        .map(|t| t.speaker_id.clone());
    turns
        .iter()
        .map(|t| SpeakerTurn {
            role: if Some(&t.speaker_id) == interviewer.as_ref() {
                Role::Interviewer
            } else {
                Role::Participant
            },
            ..t.clone()
        })
        .collect()
}

/// Greedy left-to-right packing of the spans accepted by `filter` into
/// segments whose wall-clock span is at most `max_dur`. Spans longer than
/// `max_dur` are split at `max_dur` boundaries first.
pub fn merge_segments(
    spans: &[SourceSpan],
    max_dur: f64,
    filter: impl Fn(&SourceSpan) -> bool,
) -> Result<Vec<Segment>> {
    if !(max_dur > 0.0) {
        return Err(Error::InvalidInput("max segment duration must be positive".into()));
    }
    check_ordered(spans.iter().map(|s| (s.start(), s.end())))?;
    let mut segments = Vec::new();
    let mut current: Option<Segment> = None;
    for span in spans.iter().filter(|s| filter(s)) {
        let mut start = span.start();
        while start < span.end() - TIME_EPS {
            let end = (start + max_dur).min(span.end());
            let piece = span.clipped(start, end);
            match current.as_mut() {
                Some(seg) if end - seg.start <= max_dur + TIME_EPS => seg.push(piece),
                _ => {
                    if let Some(done) = current.replace(Segment::from_span(piece)) {
                        segments.push(done);
                    }
                }
            }
            start = end;
        }
    }
    segments.extend(current);
    Ok(segments)
}

fn check_ordered(spans: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut prev_end = f64::NEG_INFINITY;
    for (start, end) in spans {
        if !(start >= 0.0 && start < end) {
            return Err(Error::InvalidInput(format!("invalid span [{start}, {end}]")));
        }
        if start < prev_end - TIME_EPS {
            return Err(Error::InvalidInput(format!(
                "spans overlap or are out of order at {start}"
            )));
        }
        prev_end = end;
    }
    Ok(())
}

/// Source of speaker turns for a recording. Implementations must return
/// time-ordered, non-overlapping turns with roles unassigned.
pub trait Diarizer {
    fn diarize(&self, entry: &ManifestEntry, wave: &Waveform) -> Result<Vec<SpeakerTurn>>;
}

/// Returns the manifest's annotated turns verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDiarizer;

impl Diarizer for OracleDiarizer {
    fn diarize(&self, entry: &ManifestEntry, _wave: &Waveform) -> Result<Vec<SpeakerTurn>> {
        oracle_diarize(entry)
    }
}

pub fn oracle_diarize(entry: &ManifestEntry) -> Result<Vec<SpeakerTurn>> {
    let turns = entry
        .turns
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("{}: no turn annotations", entry.recording_id)))?;
    check_ordered(turns.iter().map(|t| (t.start, t.end)))
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", entry.recording_id)))?;
    Ok(turns
        .iter()
        .map(|t| SpeakerTurn::new(t.start, t.end, t.speaker_id.clone()))
        .collect())
}

/// One line of the segment JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub recording_id: String,
    pub start: f64,
    pub end: f64,
    pub roles: Vec<Role>,
    pub kind: String,
}

impl SegmentRecord {
    pub fn new(recording_id: &str, seg: &Segment) -> Self {
        Self {
            recording_id: recording_id.to_string(),
            start: seg.start,
            end: seg.end,
            roles: seg.roles.iter().copied().collect(),
            kind: seg.kind_label().to_string(),
        }
    }
}
