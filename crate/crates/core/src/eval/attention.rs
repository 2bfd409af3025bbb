//! Single softmax-attention layer used as the quadratic baseline in the
//! scaling benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_into, matmul_nt_into};
use crate::par;

/// Embedding, one attention layer with full score matrix, mean pool, head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBaseline {
    pub n_mels: usize,
    pub width: usize,
    pub n_classes: usize,
    embed: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    head: Vec<f64>,
}

fn uniform(len: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

impl AttentionBaseline {
    pub fn init(n_mels: usize, width: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = 1.0 / (n_mels as f64).sqrt();
        let w = 1.0 / (width as f64).sqrt();
        Self {
            n_mels,
            width,
            n_classes,
            embed: uniform(n_mels * width, e, &mut rng),
            wq: uniform(width * width, w, &mut rng),
            wk: uniform(width * width, w, &mut rng),
            wv: uniform(width * width, w, &mut rng),
            head: uniform(width * n_classes, w, &mut rng),
        }
    }

    /// Bytes of the `frames × frames` score matrix.
    pub fn score_bytes(frames: usize) -> usize {
        frames.saturating_mul(frames).saturating_mul(std::mem::size_of::<f64>())
    }

    /// Logits for a `frames × n_mels` row-major input.
    pub fn forward(&self, values: &[f64], frames: usize) -> Result<Vec<f64>> {
        let (d, t) = (self.width, frames);
        if t == 0 {
            return Err(Error::TooShort("attention input has no frames".into()));
        }
        if values.len() != t * self.n_mels {
            return Err(Error::Shape(format!(
                "{} values for {t} frames of {} bins",
                values.len(),
                self.n_mels
            )));
        }
        let x = matmul(values, &self.embed, t, self.n_mels, d);
        let q = matmul(&x, &self.wq, t, d, d);
        let k = matmul(&x, &self.wk, t, d, d);
        let v = matmul(&x, &self.wv, t, d, d);

        let mut scores = vec![0.0; t * t];
        matmul_nt_into(&q, &k, t, d, t, &mut scores, false);
        let scale = 1.0 / (d as f64).sqrt();
        par::for_each_chunk_mut(&mut scores, t, |_, row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s * scale - max).exp();
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
        });
        let mut attended = vec![0.0; t * d];
        matmul_into(&scores, &v, t, t, d, &mut attended, false);
        drop(scores);

        let mut pooled = vec![0.0; d];
        for row in attended.chunks(d) {
            for (p, a) in pooled.iter_mut().zip(row) {
                *p += a / t as f64;
            }
        }
        Ok(matmul(&pooled, &self.head, 1, d, self.n_classes))
    }
}
