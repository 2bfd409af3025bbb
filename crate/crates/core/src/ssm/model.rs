//! Four-stage backbone: embed, blocks, pairwise downsampling, mean pool, head.

use super::block::{block_backward, block_forward, block_forward_cached, rms_rows, rms_rows_backward, BlockCache};
use super::config::STAGES;
use super::params::ModelParams;
use super::tensor::ParamSet;
use crate::audio::FbankMatrix;
use crate::error::{Error, Result};
use crate::linalg::{add_column_sums, matmul, matmul_into, matmul_nt_into, matmul_tn_into};

/// Sequence length at the input of every stage for a `frames`-long input.
pub fn stage_lengths(frames: usize) -> [usize; STAGES] {
    let mut out = [frames; STAGES];
    for s in 1..STAGES {
        out[s] = out[s - 1] / 2;
    }
    out
}

/// Forward caches for [`backbone_backward`].
#[derive(Debug, Clone)]
pub struct Activation {
    config_hash: u64,
    params_fingerprint: u64,
    input: Vec<f64>,
    lens: [usize; STAGES],
    blocks: Vec<Vec<BlockCache>>,
    /// Output of each of the first three stages (input to the downsampler).
    stage_out: Vec<Vec<f64>>,
    pooled_normed: Vec<f64>,
    pooled_inv: f64,
}

impl Activation {
    pub fn stage_lengths(&self) -> [usize; STAGES] {
        self.lens
    }
}

fn check_input(values: &[f64], frames: usize, m: &ModelParams) -> Result<()> {
    let c = &m.config;
    if values.len() != frames * c.n_mels {
        return Err(Error::Shape(format!(
            "expected {frames}×{} features, got {}",
            c.n_mels,
            values.len()
        )));
    }
    if frames < c.min_frames() {
        return Err(Error::TooShort(format!(
            "{frames} frames, backbone needs at least {}",
            c.min_frames()
        )));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("backbone input"));
    }
    Ok(())
}

fn embed(values: &[f64], frames: usize, m: &ModelParams) -> Vec<f64> {
    let d0 = m.config.width(0);
    let mut h = vec![0.0; frames * d0];
    for row in h.chunks_exact_mut(d0) {
        row.copy_from_slice(m.embed_b.data());
    }
    matmul_into(values, m.embed_w.data(), frames, m.config.n_mels, d0, &mut h, true);
    h
}

/// Pairs adjacent frames: the first `2·(len/2)` rows of `h` read as
/// `(len/2) × 2d`, projected to the next width.
fn downsample(h: &[f64], len: usize, s: usize, m: &ModelParams) -> Vec<f64> {
    let d = m.config.width(s);
    let half = len / 2;
    matmul(&h[..2 * half * d], m.down[s].data(), half, 2 * d, m.config.width(s + 1))
}

fn head(h: &[f64], len: usize, m: &ModelParams) -> (Vec<f64>, Vec<f64>, f64) {
    let d = m.config.width(STAGES - 1);
    let mut pooled = vec![0.0; d];
    add_column_sums(h, d, &mut pooled);
    pooled.iter_mut().for_each(|v| *v /= len as f64);
    let (normed, inv) = rms_rows(&pooled, d);
    let v: Vec<f64> = normed.iter().zip(m.final_norm.data()).map(|(a, g)| a * g).collect();
    let mut logits = m.head_b.data().to_vec();
    matmul_into(&v, m.head_w.data(), 1, d, m.config.n_classes, &mut logits, true);
    (logits, normed, inv[0])
}

/// Class logits for `frames × n_mels` row-major features.
pub fn forward_frames(values: &[f64], frames: usize, m: &ModelParams) -> Result<Vec<f64>> {
    check_input(values, frames, m)?;
    let lens = stage_lengths(frames);
    let mut h = embed(values, frames, m);
    for s in 0..STAGES {
        for block in &m.stages[s] {
            h = block_forward(&h, lens[s], block)?;
        }
        if s + 1 < STAGES {
            h = downsample(&h, lens[s], s, m);
        }
    }
    Ok(head(&h, lens[STAGES - 1], m).0)
}

/// Class logits for a feature matrix.
pub fn backbone_forward(f: &FbankMatrix, m: &ModelParams) -> Result<Vec<f64>> {
    check_n_mels(f, m)?;
    forward_frames(f.values(), f.frames(), m)
}

fn check_n_mels(f: &FbankMatrix, m: &ModelParams) -> Result<()> {
    if f.n_mels() != m.config.n_mels {
        return Err(Error::Shape(format!(
            "features have {} mel bins, model expects {}",
            f.n_mels(),
            m.config.n_mels
        )));
    }
    Ok(())
}

/// [`forward_frames`] keeping the caches needed by [`backbone_backward`].
pub fn forward_frames_train(values: &[f64], frames: usize, m: &ModelParams) -> Result<(Vec<f64>, Activation)> {
    check_input(values, frames, m)?;
    let lens = stage_lengths(frames);
    let mut h = embed(values, frames, m);
    let mut blocks = Vec::with_capacity(STAGES);
    let mut stage_out = Vec::with_capacity(STAGES - 1);
    for s in 0..STAGES {
        let mut caches = Vec::with_capacity(m.stages[s].len());
        for block in &m.stages[s] {
            let (out, cache) = block_forward_cached(&h, lens[s], block)?;
            h = out;
            caches.push(cache);
        }
        blocks.push(caches);
        if s + 1 < STAGES {
            let next = downsample(&h, lens[s], s, m);
            stage_out.push(std::mem::replace(&mut h, next));
        }
    }
    let (logits, pooled_normed, pooled_inv) = head(&h, lens[STAGES - 1], m);
    let act = Activation {
        config_hash: m.config.hash(),
        params_fingerprint: m.fingerprint(),
        input: values.to_vec(),
        lens,
        blocks,
        stage_out,
        pooled_normed,
        pooled_inv,
    };
    Ok((logits, act))
}

pub fn backbone_forward_train(f: &FbankMatrix, m: &ModelParams) -> Result<(Vec<f64>, Activation)> {
    check_n_mels(f, m)?;
    forward_frames_train(f.values(), f.frames(), m)
}

/// Gradients of `⟨logits, dlogits⟩` with respect to every parameter of `m`.
/// `act` must come from a forward pass with exactly these parameters.
pub fn backbone_backward(act: &Activation, m: &ModelParams, dlogits: &[f64]) -> Result<ModelParams> {
    let c = &m.config;
    if act.config_hash != c.hash() {
        return Err(Error::StaleActivation("model config changed".into()));
    }
    if act.params_fingerprint != m.fingerprint() {
        return Err(Error::StaleActivation("parameters changed since forward".into()));
    }
    if dlogits.len() != c.n_classes {
        return Err(Error::Shape(format!(
            "dlogits has {} entries, model has {} classes",
            dlogits.len(),
            c.n_classes
        )));
    }
    let mut g = m.zeroed();
    let lens = act.lens;
    let d_last = c.width(STAGES - 1);

    // Head and final norm.
    let v: Vec<f64> = act
        .pooled_normed
        .iter()
        .zip(m.final_norm.data())
        .map(|(a, w)| a * w)
        .collect();
    matmul_tn_into(&v, dlogits, 1, d_last, c.n_classes, g.head_w.data_mut(), true);
    g.head_b.data_mut().copy_from_slice(dlogits);
    let mut dv = vec![0.0; d_last];
    matmul_nt_into(dlogits, m.head_w.data(), 1, c.n_classes, d_last, &mut dv, false);
    let dpooled = rms_rows_backward(
        &dv,
        &act.pooled_normed,
        &[act.pooled_inv],
        m.final_norm.data(),
        g.final_norm.data_mut(),
    );

    let len_last = lens[STAGES - 1];
    let mut dh: Vec<f64> = Vec::with_capacity(len_last * d_last);
    for _ in 0..len_last {
        dh.extend(dpooled.iter().map(|v| v / len_last as f64));
    }

    for s in (0..STAGES).rev() {
        for (b, block) in m.stages[s].iter().enumerate().rev() {
            dh = block_backward(&dh, &act.blocks[s][b], block, &mut g.stages[s][b]);
        }
        if s > 0 {
            let prev = s - 1;
            let d = c.width(prev);
            let half = lens[prev] / 2;
            let x = &act.stage_out[prev][..2 * half * d];
            matmul_tn_into(x, &dh, half, 2 * d, c.width(s), g.down[prev].data_mut(), true);
            let mut dprev = vec![0.0; lens[prev] * d];
            matmul_nt_into(
                &dh,
                m.down[prev].data(),
                half,
                c.width(s),
                2 * d,
                &mut dprev[..2 * half * d],
                false,
            );
            dh = dprev;
        }
    }

    let frames = lens[0];
    matmul_tn_into(
        &act.input,
        &dh,
        frames,
        c.n_mels,
        c.width(0),
        g.embed_w.data_mut(),
        true,
    );
    add_column_sums(&dh, c.width(0), g.embed_b.data_mut());
    Ok(g)
}
