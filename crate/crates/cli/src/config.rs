//! Declarative run configuration: a TOML file merged with flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use longscan::audio::FbankConfig;
use longscan::eval::{default_duration_caps, standard_ablations, BenchConfig, EvalOptions};
use longscan::infer::{default_lambda_grid, BowConfig, TopK};
use longscan::pipeline::SegmentOptions;
use longscan::ssm::ModelConfig;
use longscan::synth::GenConfig;
use longscan::train::{LossConfig, OptimConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Thread cap; unset uses every core.
    pub workers: Option<usize>,
    pub classes: usize,
    /// Feature cache; defaults to `features/` next to the manifest.
    pub feature_dir: Option<PathBuf>,
    pub generate: GenerateSection,
    pub fbank: FbankConfig,
    pub segment: SegmentOptions,
    pub model: ModelSection,
    /// Defaults to weighted CE for three classes, plain CE otherwise.
    pub loss: Option<LossConfig>,
    pub optim: OptimConfig,
    pub text: BowConfig,
    pub eval: EvalSection,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub per_class: usize,
    /// Seconds per recording.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `tiny`, `small` or `medium`.
    pub preset: String,
    pub bidirectional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub top_k: TopK,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub duration_caps: Vec<f64>,
    /// Add the role/silence ablation rows.
    pub ablations: bool,
    /// Pick `k` and λ on the validation split first.
    pub tune: bool,
    pub k_grid: Vec<TopK>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            classes: 2,
            feature_dir: None,
            generate: GenerateSection::default(),
            fbank: FbankConfig::default(),
            segment: SegmentOptions::default(),
            model: ModelSection::default(),
            loss: None,
            optim: OptimConfig::default(),
            text: BowConfig::default(),
            eval: EvalSection::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            per_class: 40,
            duration: 120.0,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "tiny".into(),
            bidirectional: true,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            top_k: TopK::All,
            lambda: 0.5,
            lambda_grid: default_lambda_grid(),
            duration_caps: default_duration_caps(),
            ablations: true,
            tune: false,
            k_grid: TopK::grid(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub max_segment_dur: Option<f64>,
    pub top_k: Option<TopK>,
    pub lambda: Option<f64>,
    pub roles: Option<longscan::segment::RoleFilter>,
    pub include_silence: Option<bool>,
    pub duration_caps: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.workers {
            cfg.workers = Some(v);
        }
        if let Some(v) = o.max_segment_dur {
            cfg.segment.max_segment_dur = v;
        }
        if let Some(v) = o.top_k {
            cfg.eval.top_k = v;
        }
        if let Some(v) = o.lambda {
            cfg.eval.lambda = v;
        }
        if let Some(v) = o.roles {
            cfg.segment.filter.roles = v;
        }
        if let Some(v) = o.include_silence {
            cfg.segment.filter.include_silence = v;
        }
        if let Some(v) = &o.duration_caps {
            cfg.eval.duration_caps = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes != 2 && self.classes != 3 {
            bail!("classes must be 2 or 3, got {}", self.classes);
        }
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        self.gen_config().validate()?;
        self.segment.validate()?;
        let model = self.model_config()?;
        model.validate()?;
        if model.n_mels != self.fbank.n_mels {
            bail!(
                "model preset uses {} mel bins, fbank.n_mels is {}",
                model.n_mels,
                self.fbank.n_mels
            );
        }
        self.loss_config().validate(self.classes)?;
        self.optim.validate()?;
        self.eval_options().validate()?;
        if self.eval.k_grid.is_empty() {
            bail!("eval.k_grid is empty");
        }
        self.bench.validate()?;
        Ok(())
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            duration: self.generate.duration,
            ..GenConfig::new(self.classes, self.generate.per_class, self.seed)
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(&self.model.preset, self.classes)?;
        m.n_mels = self.fbank.n_mels;
        m.bidirectional = self.model.bidirectional;
        Ok(m)
    }

    pub fn loss_config(&self) -> LossConfig {
        self.loss
            .clone()
            .unwrap_or_else(|| LossConfig::default_for(self.classes))
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            seg: self.segment.clone(),
            top_k: self.eval.top_k,
            lambda: self.eval.lambda,
            lambda_grid: self.eval.lambda_grid.clone(),
            duration_caps: self.eval.duration_caps.clone(),
            ablations: if self.eval.ablations {
                standard_ablations()
            } else {
                Vec::new()
            },
        }
    }

    pub fn feature_dir(&self, manifest_root: &Path) -> PathBuf {
        self.feature_dir
            .clone()
            .unwrap_or_else(|| manifest_root.join("features"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nnot_a_key = 2").is_err());
        assert!(toml::from_str::<RunConfig>("[optim]\nlr = 1.0").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let o = Overrides {
            seed: Some(9),
            lambda: Some(0.25),
            max_segment_dur: Some(60.0),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!(
            (cfg.seed, cfg.eval.lambda, cfg.segment.max_segment_dur),
            (9, 0.25, 60.0)
        );
    }

    #[test]
    fn invalid_values_fail_validation() {
        let o = Overrides {
            lambda: Some(2.0),
            ..Overrides::default()
        };
        assert!(RunConfig::load(None, &o).is_err());
        let cfg = RunConfig {
            classes: 4,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
