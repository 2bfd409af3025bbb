use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softmax, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ce,
    WeightedCe,
    /// Binary cross-entropy on the sigmoid of the impaired-class logit.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Per-class weights for `WeightedCe`.
    #[serde(default)]
    pub class_weights: Vec<f64>,
}

impl LossConfig {
    pub fn ce() -> Self {
        Self {
            kind: LossKind::Ce,
            class_weights: Vec::new(),
        }
    }

    pub fn weighted(weights: Vec<f64>) -> Self {
        Self {
            kind: LossKind::WeightedCe,
            class_weights: weights,
        }
    }

    /// Weighted CE with weights (1, 3, 3) for three classes, plain CE otherwise.
    pub fn default_for(classes: usize) -> Self {
        if classes == 3 {
            Self::weighted(vec![1.0, 3.0, 3.0])
        } else {
            Self::ce()
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.kind {
            LossKind::WeightedCe => {
                if self.class_weights.len() != classes {
                    return Err(Error::InvalidInput(format!(
                        "{} class weights for {classes} classes",
                        self.class_weights.len()
                    )));
                }
                if !self.class_weights.iter().all(|&w| w > 0.0 && w.is_finite()) {
                    return Err(Error::InvalidInput("class weights must be positive".into()));
                }
            }
            LossKind::Bce if classes != 2 => {
                return Err(Error::InvalidInput("BCE requires exactly two classes".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the logits.
pub fn loss(logits: &[f64], label: usize, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if label >= c {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    cfg.validate(c)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    match cfg.kind {
        LossKind::Ce | LossKind::WeightedCe => {
            let w = match cfg.kind {
                LossKind::WeightedCe => cfg.class_weights[label],
                _ => 1.0,
            };
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let value = w * (lse - logits[label]);
            let mut grad = softmax(logits);
            grad[label] -= 1.0;
            grad.iter_mut().for_each(|g| *g *= w);
            Ok((value, grad))
        }
        LossKind::Bce => {
            let z = logits[1];
            let y = if label == 1 { 1.0 } else { 0.0 };
            let value = softplus(z) - y * z;
            Ok((value, vec![0.0, sigmoid(z) - y]))
        }
    }
}
