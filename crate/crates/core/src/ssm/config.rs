use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STAGES: usize = 4;

/// Backbone shape. Stage widths are `d_model·(1, 2, 4, 8)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub d_model: usize,
    pub depths: [usize; STAGES],
    pub n_classes: usize,
    #[serde(default = "default_state")]
    pub d_state: usize,
    #[serde(default = "default_expand")]
    pub expand: usize,
    #[serde(default = "default_conv")]
    pub conv_width: usize,
    /// Run every scan forward and time-reversed, summing the two.
    #[serde(default = "default_true")]
    pub bidirectional: bool,
}

fn default_state() -> usize {
    16
}
fn default_expand() -> usize {
    2
}
fn default_conv() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl ModelConfig {
    fn with(depths: [usize; STAGES], d_model: usize, n_classes: usize) -> Self {
        Self {
            n_mels: 128,
            d_model,
            depths,
            n_classes,
            d_state: default_state(),
            expand: default_expand(),
            conv_width: default_conv(),
            bidirectional: true,
        }
    }

    /// Depths [1,1,1,1], width 16. Gradient checks and the synthetic runs.
    pub fn tiny(n_classes: usize) -> Self {
        Self::with([1, 1, 1, 1], 16, n_classes)
    }

    pub fn small(n_classes: usize) -> Self {
        Self::with([1, 1, 2, 1], 32, n_classes)
    }

    pub fn medium(n_classes: usize) -> Self {
        Self::with([2, 2, 4, 2], 48, n_classes)
    }

    pub fn preset(name: &str, n_classes: usize) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(n_classes)),
            "small" => Ok(Self::small(n_classes)),
            "medium" => Ok(Self::medium(n_classes)),
            other => Err(Error::InvalidInput(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_mels > 0
            && self.d_model > 0
            && self.depths.iter().all(|&d| d > 0)
            && self.n_classes >= 2
            && self.d_state > 0
            && self.expand > 0
            && self.conv_width > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid model config {self:?}")))
        }
    }

    pub fn width(&self, stage: usize) -> usize {
        self.d_model << stage
    }

    pub fn d_inner(&self, stage: usize) -> usize {
        self.expand * self.width(stage)
    }

    /// Shortest input for which three halvings leave at least two frames.
    pub fn min_frames(&self) -> usize {
        2 << (STAGES - 1)
    }

    /// Stable 64-bit digest of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_widths_double() {
        let c = ModelConfig::tiny(2);
        assert_eq!((0..4).map(|s| c.width(s)).collect::<Vec<_>>(), vec![16, 32, 64, 128]);
        assert_eq!(c.d_inner(3), 256);
        assert_eq!(c.min_frames(), 16);
    }

    #[test]
    fn hash_tracks_config() {
        let a = ModelConfig::tiny(2);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.n_classes = 3;
        assert_ne!(a.hash(), b.hash());
    }
}
