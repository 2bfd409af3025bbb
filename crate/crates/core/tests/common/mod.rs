//! Reference implementations shared by the integration tests and the
//! acceptance harness. Each one is written from the definition, not from the
//! library code it checks.
#![allow(dead_code)]

use longscan::infer::SegmentPrediction;
use longscan::ssm::ScanInputs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub x: Vec<f64>,
    pub dt: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl Instance {
    pub fn random(seed: u64, max_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..=max_len);
        let channels = rng.random_range(1..=9);
        let state = rng.random_range(1..=16);
        let mut v = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
        Self {
            x: v(len * channels, -2.0, 2.0),
            dt: v(len * channels, 0.0, 0.3),
            a: v(channels * state, -3.0, -0.01),
            b: v(len * state, -1.5, 1.5),
            c: v(len * state, -1.5, 1.5),
            d: v(channels, -1.0, 1.0),
            len,
            channels,
            state,
        }
    }

    pub fn inputs(&self) -> ScanInputs<'_> {
        ScanInputs {
            x: &self.x,
            dt: &self.dt,
            a: &self.a,
            b: &self.b,
            c: &self.c,
            d: &self.d,
            len: self.len,
            channels: self.channels,
            state: self.state,
        }
    }

    /// Step-by-step recurrence written from the definition: per channel,
    /// discretize, update every state component, read out.
    pub fn oracle(&self) -> Vec<Vec<f64>> {
        let mut y = vec![vec![0.0; self.channels]; self.len];
        for c in 0..self.channels {
            let mut h = vec![0.0; self.state];
            for t in 0..self.len {
                let delta = self.dt[t * self.channels + c];
                let xv = self.x[t * self.channels + c];
                let a_bar: Vec<f64> = (0..self.state)
                    .map(|j| (delta * self.a[c * self.state + j]).exp())
                    .collect();
                let b_bar: Vec<f64> = (0..self.state).map(|j| delta * self.b[t * self.state + j]).collect();
                for j in 0..self.state {
                    h[j] = a_bar[j] * h[j] + b_bar[j] * xv;
                }
                let read: f64 = (0..self.state).map(|j| self.c[t * self.state + j] * h[j]).sum();
                y[t][c] = read + self.d[c] * xv;
            }
        }
        y
    }
}

pub fn pred(start: f64, probs: Vec<f64>) -> SegmentPrediction {
    SegmentPrediction::new(start, start + 1.0, probs)
}

/// Enumerates every k-subset and keeps the one whose members all rank ahead
/// of every non-member (higher peak, then earlier start, then lower index).
pub fn exhaustive_top_k(preds: &[SegmentPrediction], k: usize) -> Vec<f64> {
    let n = preds.len();
    let k = k.min(n);
    let ahead = |a: usize, b: usize| {
        let (pa, pb) = (&preds[a], &preds[b]);
        pa.peak > pb.peak || (pa.peak == pb.peak && (pa.start < pb.start || (pa.start == pb.start && a < b)))
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let inside = |i: usize| mask & (1 << i) != 0;
        let valid = (0..n)
            .filter(|&i| inside(i))
            .all(|i| (0..n).filter(|&j| !inside(j)).all(|j| ahead(i, j)));
        if valid {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "selection must be unique");
    let classes = preds[0].probs.len();
    let mut mean = vec![0.0; classes];
    for i in (0..n).filter(|&i| found[0] & (1 << i) != 0) {
        for c in 0..classes {
            mean[c] += preds[i].probs[c] / k as f64;
        }
    }
    mean
}

/// Counts positive/negative pairs: win 1, tie ½.
pub fn pairwise(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}
