use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

/// Log-mel filterbank settings. Defaults: 128 bins, 25 ms frames every 10 ms,
/// Hann window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbankConfig {
    pub n_mels: usize,
    /// Seconds between frame starts.
    pub frame_shift: f64,
    /// Seconds per analysis frame.
    pub frame_length: f64,
    pub window: Window,
    pub fmin: f64,
    /// Upper band edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            frame_shift: 0.010,
            frame_length: 0.025,
            window: Window::Hann,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.frame_shift > 0.0 && self.frame_length >= self.frame_shift) {
            return Err(Error::InvalidInput(
                "fbank requires frame_length >= frame_shift > 0".into(),
            ));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidInput("fbank requires n_mels >= 1".into()));
        }
        let fmax = self.fmax_for(sample_rate);
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= nyquist) {
            return Err(Error::InvalidInput(format!(
                "fbank band [{}, {fmax}] invalid for sample rate {sample_rate}",
                self.fmin
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidInput("log_floor must be positive".into()));
        }
        if self.frame_samples(sample_rate) == 0 || self.shift_samples(sample_rate) == 0 {
            return Err(Error::InvalidInput("frame shorter than one sample".into()));
        }
        Ok(())
    }

    pub fn fmax_for(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length * sample_rate as f64).round() as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * sample_rate as f64).round() as usize
    }

    /// DFT size: next power of two at or above the frame length.
    pub fn n_fft(&self, sample_rate: u32) -> usize {
        self.frame_samples(sample_rate).next_power_of_two()
    }

    /// Frames produced from `n_samples`; the incomplete tail frame is dropped.
    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> usize {
        let len = self.frame_samples(sample_rate);
        if n_samples < len {
            0
        } else {
            (n_samples - len) / self.shift_samples(sample_rate) + 1
        }
    }

    pub fn window_coefficients(&self, sample_rate: u32) -> Vec<f64> {
        let n = self.frame_samples(sample_rate);
        match self.window {
            Window::Hann => {
                if n == 1 {
                    return vec![1.0];
                }
                (0..n)
                    .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
                    .collect()
            }
        }
    }
}

/// T×n_mels log-energies, row-major, with frame start times.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankMatrix {
    values: Vec<f64>,
    n_mels: usize,
    frame_times: Vec<f64>,
}

impl FbankMatrix {
    pub fn new(values: Vec<f64>, n_mels: usize, frame_times: Vec<f64>) -> Result<Self> {
        if n_mels == 0 || values.len() != n_mels * frame_times.len() {
            return Err(Error::Shape(format!(
                "fbank values {} != {} frames x {n_mels} bins",
                values.len(),
                frame_times.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fbank values"));
        }
        Ok(Self {
            values,
            n_mels,
            frame_times,
        })
    }

    pub fn frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Concatenates the frames whose start time lies in any of the given
    /// half-open `[start, end)` spans, in span order.
    pub fn gather_spans(&self, spans: &[(f64, f64)]) -> FbankMatrix {
        let mut values = Vec::new();
        let mut times = Vec::new();
        for &(start, end) in spans {
            let lo = self.frame_times.partition_point(|&t| t < start - 1e-9);
            let hi = self.frame_times.partition_point(|&t| t < end - 1e-9);
            for t in lo..hi.max(lo) {
                values.extend_from_slice(self.row(t));
                times.push(self.frame_times[t]);
            }
        }
        FbankMatrix {
            values,
            n_mels: self.n_mels,
            frame_times: times,
        }
    }
}

/// Triangular filters on the HTK mel scale, peak weight 1 (area-unnormalized).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first DFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let mel_lo = hz_to_mel(fmin);
        let mel_hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = (0..n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let f = k as f64 * bin_hz;
                    let w = ((f - left) / (center - left)).min((right - f) / (right - center));
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self {
            filters,
            centers_hz: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((first, weights), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
        }
    }
}

const FRAME_BLOCK: usize = 256;

/// Log-mel filterbank features: Hann-windowed power spectrum, triangular
/// HTK mel filters, natural log of `max(energy, log_floor)`.
pub fn compute_fbank(wave: &Waveform, cfg: &FbankConfig) -> Result<FbankMatrix> {
    let sr = wave.sample_rate();
    cfg.validate(sr)?;
    let frame_len = cfg.frame_samples(sr);
    let shift = cfg.shift_samples(sr);
    let n_frames = cfg.frame_count(wave.len(), sr);
    if n_frames == 0 {
        return Err(Error::TooShort(format!(
            "{} samples is shorter than one {frame_len}-sample frame",
            wave.len()
        )));
    }
    let n_fft = cfg.n_fft(sr);
    let n_mels = cfg.n_mels;
    let window = cfg.window_coefficients(sr);
    let bank = MelFilterbank::new(n_mels, n_fft, sr, cfg.fmin, cfg.fmax_for(sr));
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let samples = wave.samples();
    let floor = cfg.log_floor;

    let mut values = vec![0.0; n_frames * n_mels];
    par::for_each_chunk_mut(&mut values, FRAME_BLOCK * n_mels, |bi, block| {
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_fft / 2 + 1];
        for (j, out) in block.chunks_exact_mut(n_mels).enumerate() {
            let t = bi * FRAME_BLOCK + j;
            let frame = &samples[t * shift..t * shift + frame_len];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < frame_len {
                    Complex::new(frame[i] * window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            bank.apply(&power, out);
            for v in out.iter_mut() {
                *v = v.max(floor).ln();
            }
        }
    });
    let frame_times = (0..n_frames).map(|t| (t * shift) as f64 / sr as f64).collect();
    FbankMatrix::new(values, n_mels, frame_times)
}
