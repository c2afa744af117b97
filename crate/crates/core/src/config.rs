//! Run configuration: one TOML file drives pretraining, downstream training,
//! and a full evaluation comparison, so the fixed-partition guarantee is a
//! property of the file rather than of careful invocation.
//!
//! Unknown keys are rejected, and every numeric constraint (temperature,
//! threshold, probabilities, epochs, ...) is validated before any computation
//! starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentationConfig;
use crate::label::MetadataVocabulary;
use crate::optim::LrSchedule;
use crate::seed::fingerprint_bytes;
use crate::synth::SynthConfig;
use crate::train::{
    DownstreamConfig, EncoderArch, OptimizerSpec, PretrainConfig, PretrainMethod, Regime,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub pretrain: PretrainSection,
    pub augment: AugmentSection,
    pub downstream: DownstreamSection,
    pub evaluate: EvaluateSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub pretrain_manifest: Option<PathBuf>,
    pub task_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub method: String,
    pub temperature: f64,
    pub threshold: f64,
    pub optimizer: String,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub projection_head: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            method: "mulsupcon".into(),
            temperature: 0.07,
            threshold: 0.3,
            optimizer: "sgd".into(),
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 256,
            hidden_dims: vec![128],
            embed_dim: 64,
            projection_head: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub gaussian_sigma: f64,
    pub feature_dropout_p: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.05,
            feature_dropout_p: 0.1,
            scale_lo: 0.8,
            scale_hi: 1.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamSection {
    pub regime: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub step_epoch: usize,
    pub gamma: f64,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            regime: "finetune".into(),
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            step_epoch: 5,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Methods to compare: pretraining method names plus `scratch`.
    pub methods: Vec<String>,
    pub folds: usize,
    pub repeats: usize,
    /// Row the p-values compare against; defaults to `mulsupcon` when listed,
    /// otherwise the first method.
    pub proposed: Option<String>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            methods: vec!["mulsupcon".into(), "scratch".into()],
            folds: 5,
            repeats: 10,
            proposed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub modalities: Vec<String>,
    pub anatomies: Vec<String>,
    pub n_per_cell: usize,
    pub latent_dim: usize,
    pub noise_sigma: f64,
    pub downstream_n: usize,
    pub designated_modality: usize,
    pub designated_anatomy: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            modalities: vec!["mod0".into(), "mod1".into(), "mod2".into()],
            anatomies: vec!["anat0".into(), "anat1".into(), "anat2".into()],
            n_per_cell: 50,
            latent_dim: 16,
            noise_sigma: 0.3,
            downstream_n: 200,
            designated_modality: 0,
            designated_anatomy: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pretrain;
        if PretrainMethod::parse(&p.method).is_none() {
            return Err(invalid(
                "pretrain.method",
                format!("unknown method `{}` (mulsupcon|infonce|supcon|crossentropy)", p.method),
            ));
        }
        if !p.temperature.is_finite() || p.temperature <= 0.0 {
            return Err(invalid("pretrain.temperature", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&p.threshold) {
            return Err(invalid("pretrain.threshold", "must lie in [0, 1]"));
        }
        if p.optimizer != "sgd" && p.optimizer != "adam" {
            return Err(invalid("pretrain.optimizer", "must be `sgd` or `adam`"));
        }
        if !p.learning_rate.is_finite() || p.learning_rate <= 0.0 {
            return Err(invalid("pretrain.learning_rate", "must be > 0"));
        }
        if p.epochs == 0 {
            return Err(invalid("pretrain.epochs", "must be >= 1"));
        }
        if p.batch_size < 2 {
            return Err(invalid("pretrain.batch_size", "must be >= 2"));
        }
        if p.embed_dim < 2 {
            return Err(invalid("pretrain.embed_dim", "must be >= 2"));
        }
        if p.hidden_dims.contains(&0) {
            return Err(invalid("pretrain.hidden_dims", "must be positive"));
        }

        let a = &self.augment;
        if !a.gaussian_sigma.is_finite() || a.gaussian_sigma < 0.0 {
            return Err(invalid("augment.gaussian_sigma", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&a.feature_dropout_p) {
            return Err(invalid("augment.feature_dropout_p", "must lie in [0, 1]"));
        }
        if !a.scale_hi.is_finite() || a.scale_lo <= 0.0 || a.scale_lo > a.scale_hi {
            return Err(invalid("augment.scale", "need 0 < scale_lo <= scale_hi"));
        }

        let d = &self.downstream;
        if d.regime != "finetune" && d.regime != "linear_probe" {
            return Err(invalid(
                "downstream.regime",
                "must be `finetune` or `linear_probe`",
            ));
        }
        if d.batch_size == 0 {
            return Err(invalid("downstream.batch_size", "must be >= 1"));
        }
        if !d.learning_rate.is_finite() || d.learning_rate <= 0.0 {
            return Err(invalid("downstream.learning_rate", "must be > 0"));
        }
        if d.step_epoch == 0 {
            return Err(invalid("downstream.step_epoch", "must be >= 1"));
        }
        if d.gamma <= 0.0 || d.gamma > 1.0 {
            return Err(invalid("downstream.gamma", "must lie in (0, 1]"));
        }

        let e = &self.evaluate;
        if e.methods.is_empty() {
            return Err(invalid("evaluate.methods", "must list at least one method"));
        }
        for m in &e.methods {
            if m != "scratch" && PretrainMethod::parse(m).is_none() {
                return Err(invalid(
                    "evaluate.methods",
                    format!("unknown method `{m}`"),
                ));
            }
        }
        if e.folds < 2 {
            return Err(invalid("evaluate.folds", "must be >= 2"));
        }
        if e.repeats == 0 {
            return Err(invalid("evaluate.repeats", "must be >= 1"));
        }
        if let Some(proposed) = &e.proposed {
            if !e.methods.contains(proposed) {
                return Err(invalid(
                    "evaluate.proposed",
                    format!("`{proposed}` is not among evaluate.methods"),
                ));
            }
        }

        let s = &self.synth;
        if s.modalities.is_empty() || s.anatomies.is_empty() {
            return Err(invalid("synth", "modalities and anatomies must be non-empty"));
        }
        if s.n_per_cell == 0 {
            return Err(invalid("synth.n_per_cell", "must be >= 1"));
        }
        if s.latent_dim < 2 {
            return Err(invalid("synth.latent_dim", "must be >= 2"));
        }
        if !s.noise_sigma.is_finite() || s.noise_sigma < 0.0 {
            return Err(invalid("synth.noise_sigma", "must be finite and >= 0"));
        }
        if s.downstream_n == 0 {
            return Err(invalid("synth.downstream_n", "must be >= 1"));
        }
        if s.designated_modality >= s.modalities.len()
            || s.designated_anatomy >= s.anatomies.len()
        {
            return Err(invalid(
                "synth.designated_cell",
                "indices outside the vocabulary",
            ));
        }
        Ok(())
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        AugmentationConfig {
            gaussian_sigma: self.augment.gaussian_sigma,
            feature_dropout_p: self.augment.feature_dropout_p,
            scale_jitter: (self.augment.scale_lo, self.augment.scale_hi),
        }
    }

    pub fn encoder_arch(&self) -> EncoderArch {
        EncoderArch {
            hidden_dims: self.pretrain.hidden_dims.clone(),
            embed_dim: self.pretrain.embed_dim,
            projection_head: self.pretrain.projection_head,
        }
    }

    /// Pretraining config for a method, seeded with `seed`.
    pub fn pretrain_config(&self, method: PretrainMethod, seed: u64) -> PretrainConfig {
        let p = &self.pretrain;
        let optimizer = if p.optimizer == "adam" {
            OptimizerSpec::Adam {
                lr: p.learning_rate,
                weight_decay: p.weight_decay,
            }
        } else {
            OptimizerSpec::Sgd {
                lr: p.learning_rate,
                momentum: p.momentum,
                weight_decay: p.weight_decay,
            }
        };
        PretrainConfig {
            method,
            loss: crate::loss::LossConfig {
                temperature: p.temperature,
                threshold: p.threshold,
            },
            optimizer,
            schedule: LrSchedule::constant(p.learning_rate),
            epochs: p.epochs,
            batch_size: p.batch_size,
            seed,
            augment: self.augmentation(),
            arch: self.encoder_arch(),
        }
    }

    pub fn configured_pretrain_method(&self) -> PretrainMethod {
        PretrainMethod::parse(&self.pretrain.method).expect("validated")
    }

    pub fn downstream_config(&self, seed: u64) -> DownstreamConfig {
        let d = &self.downstream;
        let regime = if d.regime == "linear_probe" {
            Regime::LinearProbe
        } else {
            Regime::Finetune
        };
        DownstreamConfig {
            regime,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            schedule: LrSchedule::step(d.learning_rate, d.step_epoch, d.gamma),
            seed,
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig, ConfigError> {
        let s = &self.synth;
        let vocab = MetadataVocabulary::new(s.modalities.clone(), s.anatomies.clone())
            .map_err(|e| invalid("synth", e.to_string()))?;
        Ok(SynthConfig {
            vocab,
            n_per_cell: s.n_per_cell,
            latent_dim: s.latent_dim,
            noise_sigma: s.noise_sigma,
            seed: self.seed,
            downstream_n: s.downstream_n,
            designated_cell: (s.designated_modality, s.designated_anatomy),
        })
    }

    /// Name of the method the report's p-values compare against.
    pub fn proposed_method(&self) -> String {
        if let Some(p) = &self.evaluate.proposed {
            return p.clone();
        }
        if self.evaluate.methods.iter().any(|m| m == "mulsupcon") {
            return "mulsupcon".into();
        }
        self.evaluate.methods[0].clone()
    }

    /// Stable fingerprint of the full configuration.
    pub fn fingerprint(&self) -> u64 {
        let canonical = toml::to_string(self).expect("config serializes");
        fingerprint_bytes(canonical.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.pretrain.temperature, 0.07);
        assert_eq!(cfg.pretrain.threshold, 0.3);
        assert_eq!(cfg.downstream.epochs, 10);
        assert_eq!(cfg.downstream.batch_size, 32);
        assert_eq!(cfg.evaluate.folds, 5);
        assert_eq!(cfg.evaluate.repeats, 10);
        assert_eq!(cfg.proposed_method(), "mulsupcon");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::parse("unknown_key = 3"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::parse("[pretrain]\nnot_a_field = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn bad_temperature_and_threshold_are_rejected() {
        let err = RunConfig::parse("[pretrain]\ntemperature = 0.0").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "pretrain.temperature",
                ..
            }
        ));
        let err = RunConfig::parse("[pretrain]\nthreshold = 1.5").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "pretrain.threshold",
                ..
            }
        ));
    }

    #[test]
    fn unknown_method_is_rejected() {
        let err = RunConfig::parse("[pretrain]\nmethod = \"simclr2\"").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "pretrain.method",
                ..
            }
        ));
        let err = RunConfig::parse("[evaluate]\nmethods = [\"nope\"]").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "evaluate.methods",
                ..
            }
        ));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::parse("seed = 1").unwrap();
        let b = RunConfig::parse("seed = 1").unwrap();
        let c = RunConfig::parse("seed = 2").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn typed_configs_carry_the_table_defaults() {
        let cfg = RunConfig::parse("seed = 5").unwrap();
        let p = cfg.pretrain_config(PretrainMethod::MulSupCon, 5);
        assert_eq!(p.loss.temperature, 0.07);
        assert_eq!(p.loss.threshold, 0.3);
        assert!(matches!(
            p.optimizer,
            OptimizerSpec::Sgd {
                lr,
                momentum,
                weight_decay
            } if lr == 0.05 && momentum == 0.9 && weight_decay == 1e-4
        ));
        let d = cfg.downstream_config(5);
        assert_eq!(d.epochs, 10);
        assert_eq!(d.batch_size, 32);
        assert_eq!(d.learning_rate, 1e-4);
        assert_eq!(d.schedule.lr_at(4), 1e-4);
        assert!((d.schedule.lr_at(5) - 1e-5).abs() < 1e-18);
    }
}
