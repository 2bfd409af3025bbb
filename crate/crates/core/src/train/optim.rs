use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::ParamSet;

/// Adam settings and learning-rate schedule. The default is the reference
/// recipe: lr 1e-5, betas (0.95, 0.999), weight decay 5e-7, batch 1,
/// 40 epochs, 1000 warm-up steps, halving per epoch from epoch 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub decay_factor: f64,
    pub decay_start_epoch: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-5,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-7,
            batch_size: 1,
            epochs: 40,
            warmup_steps: 1000,
            decay_factor: 0.5,
            decay_start_epoch: 10,
        }
    }
}

impl OptimConfig {
    /// Short schedule for small synthetic runs: larger step, one short
    /// warm-up, a handful of epochs.
    pub fn desk() -> Self {
        Self {
            lr0: 1e-3,
            warmup_steps: 32,
            epochs: 3,
            decay_start_epoch: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 >= 0.0
            && self.lr0.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.warmup_steps > 0
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// Linear warm-up, then `decay_factor` per epoch with the first reduction
/// applied during `decay_start_epoch` (epochs are 0-based).
pub fn lr_at(step: usize, epoch: usize, cfg: &OptimConfig) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr0 * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let halvings = (epoch + 1).saturating_sub(cfg.decay_start_epoch);
    cfg.lr0 * cfg.decay_factor.powi(halvings as i32)
}

/// First and second moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: ParamSet + Clone> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: params.zeroed(),
            v: params.zeroed(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient had a non-finite entry; nothing changed.
    Skipped,
}

/// Adam with bias correction and decoupled weight decay
/// (`θ ← θ − lr·wd·θ` before the moment update).
pub fn adam_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
    lr: f64,
    cfg: &OptimConfig,
) -> StepOutcome {
    if !grads.all_finite() {
        log::warn!("skipping optimizer step {}: non-finite gradient", state.step + 1);
        return StepOutcome::Skipped;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            p[i] -= lr * cfg.weight_decay * p[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    StepOutcome::Applied
}
