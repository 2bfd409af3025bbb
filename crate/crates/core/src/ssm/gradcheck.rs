//! Finite-difference verification of [`backbone_backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ModelConfig;
use super::model::{backbone_backward, forward_frames, forward_frames_train};
use super::params::ModelParams;
use super::tensor::ParamSet;
use crate::error::Result;

pub const GRADCHECK_FRAMES: usize = 32;
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_MIN_SAMPLES: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
    /// Whether any analytic gradient entry was NaN or infinite.
    pub non_finite: bool,
    pub tensors: Vec<TensorCheck>,
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks the analytic gradient of `⟨logits, w⟩` for a random model and input
/// drawn from `seed`.
pub fn grad_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(config, seed, false, |_| {})
}

/// [`grad_check`] with control over the input (`zero_input`) and a hook that
/// may tamper with the analytic gradient before comparison.
pub fn grad_check_with(
    config: &ModelConfig,
    seed: u64,
    zero_input: bool,
    corrupt: impl Fn(&mut ModelParams),
) -> Result<GradCheckReport> {
    config.validate()?;
    let m = ModelParams::init(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let frames = GRADCHECK_FRAMES.max(config.min_frames());
    let x: Vec<f64> = (0..frames * config.n_mels)
        .map(|_| if zero_input { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect();
    let w: Vec<f64> = (0..config.n_classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |p: &ModelParams| -> Result<f64> {
        let logits = forward_frames(&x, frames, p)?;
        Ok(logits.iter().zip(&w).map(|(a, b)| a * b).sum())
    };

    let (_, act) = forward_frames_train(&x, frames, &m)?;
    let mut grads = backbone_backward(&act, &m, &w)?;
    corrupt(&mut grads);
    let non_finite = !grads.all_finite();

    let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
    let per_tensor = GRADCHECK_MIN_SAMPLES.div_ceil(names.len());
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();

    let mut probe = m.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let numel = analytic[ti].len();
        let mut worst = 0.0f64;
        let picks: Vec<usize> = (0..per_tensor.min(numel)).map(|_| rng.random_range(0..numel)).collect();
        for &i in &picks {
            let orig = probe.tensors()[ti].data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = orig + GRADCHECK_EPS;
            let up = objective(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig - GRADCHECK_EPS;
            let down = objective(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_EPS);
            let err = rel_error(analytic[ti][i], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    let (worst_name, max_rel_error) = tensors.iter().fold((String::new(), 0.0f64), |(n, e), t| {
        if t.max_rel_error > e {
            (t.name.clone(), t.max_rel_error)
        } else {
            (n, e)
        }
    });
    Ok(GradCheckReport {
        parameters: m.param_count(),
        checked: tensors.iter().map(|t| t.checked).sum(),
        max_rel_error,
        worst: worst_name,
        non_finite,
        tensors,
    })
}
