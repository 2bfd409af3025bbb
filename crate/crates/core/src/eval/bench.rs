//! Sequence-length scaling benchmark: selective-scan backbone against a
//! quadratic attention layer.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionBaseline;
use crate::alloc_track;
use crate::error::{Error, Result};
use crate::par;
use crate::ssm::{forward_frames, selective_scan_into, ModelConfig, ModelParams, ScanInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub ssm_lengths: Vec<usize>,
    pub attention_lengths: Vec<usize>,
    /// Timed runs per length; the median is reported.
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Lengths whose attention score matrix exceeds this many bytes are
    /// recorded as failures instead of run.
    pub attention_memory_budget: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(2),
            ssm_lengths: doubling(1024, 65536),
            attention_lengths: doubling(1024, 8192),
            runs: 5,
            warmup: 1,
            seed: 0,
            attention_memory_budget: 2 << 30,
        }
    }
}

/// `lo, 2·lo, 4·lo, …` up to and including `hi`.
pub fn doubling(lo: usize, hi: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut t = lo.max(1);
    while t <= hi {
        v.push(t);
        t *= 2;
    }
    v
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.runs < 5 {
            return Err(Error::InvalidInput("benchmark needs at least 5 timed runs".into()));
        }
        for (name, lens) in [("ssm", &self.ssm_lengths), ("attention", &self.attention_lengths)] {
            if lens.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(format!(
                    "{name} lengths must be strictly increasing"
                )));
            }
            if lens.first().is_some_and(|&t| t < self.model.min_frames()) {
                return Err(Error::InvalidInput(format!(
                    "{name} lengths must be at least {} frames",
                    self.model.min_frames()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub frames: usize,
    pub reason: String,
}

/// Timings of one model over increasing lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSeries {
    pub model: String,
    pub lengths: Vec<usize>,
    /// Median seconds per forward pass.
    pub wall_times: Vec<f64>,
    /// Peak bytes allocated during one forward pass (0 when untracked).
    pub peak_mem: Vec<usize>,
    /// Least-squares slope of log time against log length.
    pub slope: Option<f64>,
    pub failures: Vec<BenchFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workers: usize,
    pub runs: usize,
    /// Whether the counting allocator was installed; otherwise memory
    /// columns are zero.
    pub memory_tracked: bool,
    pub series: Vec<BenchSeries>,
    /// Bytes allocated by the bare scan recurrence per length (output
    /// buffer preallocated), i.e. the recurrent state.
    pub scan_state_bytes: Vec<(usize, usize)>,
}

impl BenchReport {
    pub fn series(&self, model: &str) -> Option<&BenchSeries> {
        self.series.iter().find(|s| s.model == model)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    /// One block per model, separated by two blank lines (gnuplot `index`).
    pub fn write_gnuplot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (i, s) in self.series.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str(&format!(
                "# {} slope {}\n# frames seconds peak_bytes\n",
                s.model,
                fmt_opt(s.slope)
            ));
            for ((t, sec), mem) in s.lengths.iter().zip(&s.wall_times).zip(&s.peak_mem) {
                out.push_str(&format!("{t} {sec:.6e} {mem}\n"));
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// points or non-positive values.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_input(frames: usize, n_mels: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..frames * n_mels).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn time_series(
    name: &str,
    lengths: &[usize],
    cfg: &BenchConfig,
    admit: impl Fn(usize) -> Option<String>,
    run: impl Fn(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<BenchSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut series = BenchSeries {
        model: name.to_string(),
        lengths: Vec::new(),
        wall_times: Vec::new(),
        peak_mem: Vec::new(),
        slope: None,
        failures: Vec::new(),
    };
    for &t in lengths {
        if let Some(reason) = admit(t) {
            log::warn!("{name}: skipping {t} frames: {reason}");
            series.failures.push(BenchFailure { frames: t, reason });
            continue;
        }
        let x = random_input(t, cfg.model.n_mels, &mut rng);
        let (first, peak) = alloc_track::measure_peak(|| run(&x, t));
        if let Err(e) = first {
            series.failures.push(BenchFailure {
                frames: t,
                reason: e.to_string(),
            });
            continue;
        }
        for _ in 1..cfg.warmup {
            run(&x, t)?;
        }
        let mut times = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let start = Instant::now();
            std::hint::black_box(run(std::hint::black_box(&x), t)?);
            times.push(start.elapsed().as_secs_f64());
        }
        let med = median(times);
        log::info!("{name}: {t} frames {med:.4}s peak {peak} B");
        series.lengths.push(t);
        series.wall_times.push(med);
        series.peak_mem.push(peak);
    }
    let xs: Vec<f64> = series.lengths.iter().map(|&t| t as f64).collect();
    series.slope = loglog_slope(&xs, &series.wall_times);
    Ok(series)
}

/// Bytes allocated by [`selective_scan_into`] at length `len` with the
/// output buffer supplied by the caller.
pub fn scan_state_bytes(len: usize, channels: usize, state: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let x = draw(len * channels, -1.0, 1.0);
    let dt = draw(len * channels, 0.001, 0.1);
    let a = draw(channels * state, -1.0, -0.1);
    let b = draw(len * state, -1.0, 1.0);
    let c = draw(len * state, -1.0, 1.0);
    let d = draw(channels, -1.0, 1.0);
    let inp = ScanInputs {
        x: &x,
        dt: &dt,
        a: &a,
        b: &b,
        c: &c,
        d: &d,
        len,
        channels,
        state,
    };
    let mut y = vec![0.0; len * channels];
    let (r, bytes) = alloc_track::measure_peak(|| selective_scan_into(&inp, &mut y));
    r?;
    Ok(bytes)
}

/// Times both models on one worker thread.
pub fn bench_scaling(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    par::with_workers(Some(1), || {
        let m = ModelParams::init(&cfg.model, cfg.seed);
        let ssm = time_series("ssm", &cfg.ssm_lengths, cfg, |_| None, |x, t| forward_frames(x, t, &m))?;

        let att = AttentionBaseline::init(cfg.model.n_mels, cfg.model.d_model, cfg.model.n_classes, cfg.seed);
        let budget = cfg.attention_memory_budget;
        let attention = time_series(
            "attention",
            &cfg.attention_lengths,
            cfg,
            |t| {
                let need = AttentionBaseline::score_bytes(t);
                (need > budget).then(|| format!("score matrix needs {need} B, budget {budget} B"))
            },
            |x, t| att.forward(x, t),
        )?;

        let (ch, n) = (cfg.model.d_inner(0), cfg.model.d_state);
        let scan_state = cfg
            .ssm_lengths
            .iter()
            .map(|&t| scan_state_bytes(t, ch, n, cfg.seed).map(|b| (t, b)))
            .collect::<Result<Vec<_>>>()?;

        Ok(BenchReport {
            workers: par::current_workers(),
            runs: cfg.runs,
            memory_tracked: alloc_track::is_active(),
            series: vec![ssm, attention],
            scan_state_bytes: scan_state,
        })
    })
}
