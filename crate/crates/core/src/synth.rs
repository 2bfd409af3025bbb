//! Synthetic interview recordings with class-dependent planted markers.
//!
//! Each recording alternates interviewer and participant utterances separated
//! by silent gaps. The class controls the participant's pitch, the share of
//! the recording spent silent, the interviewer's syllable rate and the filler
//! rate in the participant transcript.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry, Split, TurnAnnotation};
use crate::par;

pub const INTERVIEWER_ID: &str = "spk_a";
pub const PARTICIPANT_ID: &str = "spk_b";

const HARMONICS: usize = 8;
const SPEECH_AMPLITUDE: f64 = 0.25;
const SPEECH_NOISE: f64 = 0.01;
const BACKGROUND_NOISE: f64 = 0.002;
const INTERVIEWER_PITCH: f64 = 120.0;
const PARTICIPANT_SYLLABLE_RATE: f64 = 4.0;
const WORDS_PER_SECOND: f64 = 2.5;
const MIN_UTTERANCE: f64 = 0.5;
const MIN_GAP: f64 = 0.2;
const FADE: f64 = 0.01;

const CONTENT_WORDS: &[&str] = &[
    "the",
    "boy",
    "girl",
    "cookie",
    "jar",
    "stool",
    "falling",
    "mother",
    "sink",
    "water",
    "overflowing",
    "dishes",
    "plate",
    "window",
    "kitchen",
    "garden",
    "outside",
    "curtains",
    "reaching",
    "taking",
    "drying",
    "floor",
    "cupboard",
    "summer",
    "morning",
    "house",
    "tree",
    "walking",
    "table",
    "chair",
    "bread",
    "milk",
    "sister",
    "brother",
    "school",
    "road",
    "car",
    "dog",
    "river",
    "friend",
];
const INTERVIEWER_WORDS: &[&str] = &[
    "can", "you", "tell", "me", "what", "see", "in", "this", "picture", "please", "describe", "anything", "else",
    "okay", "good", "and", "then", "happened", "next", "going", "on",
];
const FILLERS: &[&str] = &["uh", "um", "er", "hmm"];

/// Class names in label order.
pub fn class_names(classes: usize) -> &'static [&'static str] {
    match classes {
        3 => &["normal", "MCI", "dementia"],
        _ => &["normal", "dementia"],
    }
}

/// Planted markers of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMarkers {
    pub name: String,
    pub pause_fraction: f64,
    pub pitch_hz: f64,
    pub filler_rate: f64,
    /// Syllable rate of the interviewer's prompts in Hz.
    pub interviewer_rate: f64,
}

impl ClassMarkers {
    pub fn normal() -> Self {
        Self {
            name: "normal".into(),
            pause_fraction: 0.10,
            pitch_hz: 210.0,
            filler_rate: 0.05,
            interviewer_rate: 4.5,
        }
    }

    pub fn mci() -> Self {
        Self {
            name: "MCI".into(),
            pause_fraction: 0.25,
            pitch_hz: 180.0,
            filler_rate: 0.15,
            interviewer_rate: 4.0,
        }
    }

    pub fn dementia() -> Self {
        Self {
            name: "dementia".into(),
            pause_fraction: 0.40,
            pitch_hz: 150.0,
            filler_rate: 0.25,
            interviewer_rate: 3.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub classes: usize,
    pub recordings_per_class: usize,
    /// Seconds per recording.
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Mean utterance length in seconds; turns alternate at this period.
    pub turn_period: f64,
    /// One entry per class, in label order.
    pub markers: Vec<ClassMarkers>,
}

impl GenConfig {
    pub fn new(classes: usize, recordings_per_class: usize, seed: u64) -> Self {
        let markers = if classes == 3 {
            vec![ClassMarkers::normal(), ClassMarkers::mci(), ClassMarkers::dementia()]
        } else {
            vec![ClassMarkers::normal(), ClassMarkers::dementia()]
        };
        Self {
            classes,
            recordings_per_class,
            duration: 120.0,
            sample_rate: 16_000,
            seed,
            turn_period: 4.0,
            markers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.classes == 2 || self.classes == 3) {
            return Err(Error::InvalidInput(format!(
                "classes must be 2 or 3, got {}",
                self.classes
            )));
        }
        if self.markers.len() != self.classes {
            return Err(Error::InvalidInput("one marker set per class required".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) || self.sample_rate == 0 {
            return Err(Error::InvalidInput("duration and sample rate must be positive".into()));
        }
        if !(self.turn_period >= MIN_UTTERANCE) {
            return Err(Error::InvalidInput(format!("turn_period must be >= {MIN_UTTERANCE}")));
        }
        for m in &self.markers {
            let ok = (0.0..1.0).contains(&m.pause_fraction)
                && (0.0..=1.0).contains(&m.filler_rate)
                && m.pitch_hz > 0.0
                && (m.pitch_hz * HARMONICS as f64) < (self.sample_rate as f64 / 2.0)
                && m.interviewer_rate > 0.0;
            if !ok {
                return Err(Error::InvalidInput(format!("invalid markers {m:?}")));
            }
        }
        for (i, a) in self.markers.iter().enumerate() {
            if self.markers[i + 1..]
                .iter()
                .any(|b| b.pause_fraction == a.pause_fraction)
            {
                return Err(Error::InvalidInput(
                    "pause fractions must differ between classes".into(),
                ));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent per-recording seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Splits `total` into `n` parts, each at least `floor`, with Gamma-distributed
/// shares of the remainder. Returns all zeros when `total` is zero.
fn partition(total: f64, n: usize, floor: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let floor = floor.min(0.5 * total / n as f64);
    let gamma = Gamma::new(4.0, 1.0).expect("valid gamma");
    let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = w.iter().sum();
    let spare = total - floor * n as f64;
    w.into_iter().map(|v| floor + spare * v / sum).collect()
}

fn tone_complex(out: &mut [f64], pitch: f64, syllable_rate: f64, sample_rate: u32, rng: &mut ChaCha8Rng) {
    let sr = sample_rate as f64;
    let noise = Normal::new(0.0, SPEECH_NOISE).expect("valid normal");
    let vibrato_phase = rng.random_range(0.0..2.0 * PI);
    let syllable_phase = rng.random_range(0.0..PI);
    let fade = (FADE * sr) as usize;
    let n = out.len();
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let norm: f64 = (1..=HARMONICS).map(|h| 1.0 / h as f64).sum();
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f0 = pitch * (1.0 + 0.03 * (2.0 * PI * 0.7 * t + vibrato_phase).sin());
        phase += 2.0 * PI * f0 / sr;
        // sin(hφ) by the Chebyshev recurrence.
        let (s1, c1) = phase.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut acc = 0.0;
        for h in 1..=HARMONICS {
            acc += cur / h as f64;
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
        let env = 0.6 + 0.4 * (PI * syllable_rate * t + syllable_phase).sin().abs();
        let ramp = (i.min(n - 1 - i) as f64 / fade.max(1) as f64).min(1.0);
        *o = SPEECH_AMPLITUDE * ramp * env * acc / norm + noise.sample(rng);
    }
}

fn words(vocab: &[&str], count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..count)
        .map(|_| vocab[rng.random_range(0..vocab.len())].to_string())
        .collect()
}

/// Generates one recording of class `label`. Fully determined by
/// `(label, seed, cfg)`.
pub fn generate_recording(label: usize, seed: u64, cfg: &GenConfig) -> Result<(Waveform, ManifestEntry)> {
    cfg.validate()?;
    if label >= cfg.classes {
        return Err(Error::InvalidInput(format!(
            "label {label} invalid for {} classes",
            cfg.classes
        )));
    }
    let mk = &cfg.markers[label];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate as f64;
    let silence = mk.pause_fraction * cfg.duration;
    let speech = cfg.duration - silence;
    let n_utt = ((speech / cfg.turn_period).round() as usize).max(2);
    let utt = partition(speech, n_utt, MIN_UTTERANCE, &mut rng);
    let gaps = partition(silence, n_utt + 1, MIN_GAP, &mut rng);

    let n_samples = (cfg.duration * sr).round() as usize;
    let background = Normal::new(0.0, BACKGROUND_NOISE).expect("valid normal");
    let mut samples: Vec<f64> = (0..n_samples).map(|_| background.sample(&mut rng)).collect();

    let mut turns = Vec::with_capacity(n_utt);
    let mut t = 0.0;
    for (i, &len) in utt.iter().enumerate() {
        t += gaps[i];
        let (start, end) = (t, (t + len).min(cfg.duration));
        t += len;
        let interviewer = i % 2 == 0;
        let (pitch, rate) = if interviewer {
            (INTERVIEWER_PITCH, mk.interviewer_rate)
        } else {
            (mk.pitch_hz, PARTICIPANT_SYLLABLE_RATE)
        };
        let s0 = ((start * sr).round() as usize).min(n_samples);
        let s1 = ((end * sr).round() as usize).min(n_samples);
        let mut voice = vec![0.0; s1 - s0];
        if !voice.is_empty() {
            tone_complex(&mut voice, pitch, rate, cfg.sample_rate, &mut rng);
        }
        for (o, v) in samples[s0..s1].iter_mut().zip(voice) {
            *o += v;
        }
        let n_words = ((WORDS_PER_SECOND * len).round() as usize).max(1);
        let vocab = if interviewer { INTERVIEWER_WORDS } else { CONTENT_WORDS };
        turns.push((start, end, interviewer, words(vocab, n_words, &mut rng)));
    }

    // Fillers replace an exact share of the participant's words.
    let slots: Vec<(usize, usize)> = turns
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.2)
        .flat_map(|(ti, t)| (0..t.3.len()).map(move |wi| (ti, wi)))
        .collect();
    let n_fill = (mk.filler_rate * slots.len() as f64).round() as usize;
    for idx in sample(&mut rng, slots.len(), n_fill) {
        let (ti, wi) = slots[idx];
        turns[ti].3[wi] = FILLERS[rng.random_range(0..FILLERS.len())].to_string();
    }

    for v in &mut samples {
        *v = v.clamp(-1.0, 1.0);
    }
    let wave = Waveform::new(samples, cfg.sample_rate)?;
    let recording_id = format!("syn-{label}-{seed:016x}");
    let entry = ManifestEntry {
        wav: PathBuf::from(format!("wavs/{recording_id}.wav")),
        participant_id: format!("p-{recording_id}"),
        recording_id,
        label,
        split: Split::Train,
        turns: Some(
            turns
                .into_iter()
                .map(|(start, end, interviewer, words)| TurnAnnotation {
                    start,
                    end,
                    speaker_id: if interviewer { INTERVIEWER_ID } else { PARTICIPANT_ID }.to_string(),
                    text: words.join(" "),
                })
                .collect(),
        ),
    };
    Ok((wave, entry))
}

/// Share of the recording not covered by annotated turns.
pub fn annotated_silence_fraction(entry: &ManifestEntry, duration: f64) -> f64 {
    let speech: f64 = entry.turns.iter().flatten().map(|t| t.end - t.start).sum();
    1.0 - speech / duration
}

/// Share of filler tokens among the participant's words.
pub fn filler_fraction(entry: &ManifestEntry) -> f64 {
    let words: Vec<&str> = entry
        .turns
        .iter()
        .flatten()
        .filter(|t| t.speaker_id == PARTICIPANT_ID)
        .flat_map(|t| t.text.split_whitespace())
        .collect();
    if words.is_empty() {
        return 0.0;
    }
    words.iter().filter(|w| FILLERS.contains(w)).count() as f64 / words.len() as f64
}

/// Stratified 80/10/10 split sizes for `n` recordings of one class.
fn split_sizes(n: usize) -> (usize, usize) {
    let train = (0.8 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    (train, val)
}

/// Writes `wavs/*.wav` and `manifest.jsonl` under `out_dir`.
pub fn generate_dataset(cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut split_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x0053_504c_4954));
    let mut jobs = Vec::with_capacity(cfg.classes * cfg.recordings_per_class);
    for label in 0..cfg.classes {
        let n = cfg.recordings_per_class;
        let (train, val) = split_sizes(n);
        let order = sample(&mut split_rng, n, n).into_vec();
        for i in 0..n {
            let rank = order.iter().position(|&o| o == i).unwrap();
            let split = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Validation
            } else {
                Split::Test
            };
            jobs.push((label, i, split));
        }
    }

    let entries = par::try_map(&jobs, |&(label, i, split)| -> Result<ManifestEntry> {
        let index = (label * cfg.recordings_per_class + i) as u64;
        let seed = splitmix64(cfg.seed.wrapping_mul(0x1000_0000_01b3).wrapping_add(index));
        let (wave, mut entry) = generate_recording(label, seed, cfg)?;
        entry.recording_id = format!("rec{:02}{:04}", label, i);
        entry.participant_id = format!("par{:02}{:04}", label, i);
        entry.wav = PathBuf::from(format!("wavs/{}.wav", entry.recording_id));
        entry.split = split;
        write_wav(out_dir.join(&entry.wav), &wave)?;
        Ok(entry)
    })?;

    let manifest = Manifest::new(out_dir, entries);
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
