//! Run configuration shared by the library entry points and the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bibliometrics::{AifParams, DEFAULT_BALANCE};
use crate::corpus::{SplitSpec, Task};
use crate::fusion::ModelConfig;
use crate::losses::LossConfig;
use crate::nn::AdamConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub title_max_len: usize,
    pub abstract_max_len: usize,
    /// Words seen fewer times in the training split map to the unknown id.
    pub min_count: usize,
    pub max_vocab: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            title_max_len: 64,
            abstract_max_len: 512,
            min_count: 1,
            max_vocab: 30_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub task: Task,
    pub num_runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 30,
            seed: 42,
            task: Task::JournalImpact,
            num_runs: 5,
        }
    }
}

/// Parameters of the article-level impact factor. `cits_m` defaults to the
/// median citation count of the labeled corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AifConfig {
    pub d: f64,
    pub cits_m: Option<f64>,
}

impl Default for AifConfig {
    fn default() -> Self {
        Self {
            d: DEFAULT_BALANCE,
            cits_m: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub vocab_size: usize,
    pub knn_k: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            knn_k: 5,
            l2: 1e-3,
            learning_rate: 0.5,
            iterations: 500,
        }
    }
}

/// Named model variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Attention and AFF fusion removed.
    NoFusion,
    /// Contrastive term removed (`α = 0`).
    NoSupcon,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ImacConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub tokenizer: TokenizerConfig,
    pub split: SplitSpec,
    pub aif: AifConfig,
    pub baselines: BaselineConfig,
}

impl ImacConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.split.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.epochs == 0 || t.num_runs == 0 {
            return Err(Error::Config("batch_size, epochs and num_runs must be positive".into()));
        }
        if !(t.optimizer.learning_rate > 0.0 && t.optimizer.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                t.optimizer.learning_rate
            )));
        }
        let tk = &self.tokenizer;
        if tk.title_max_len < 2 || tk.abstract_max_len < 2 {
            return Err(Error::Config("token sequence limits must be at least 2".into()));
        }
        let limit = tk.title_max_len.max(tk.abstract_max_len);
        if limit > self.model.encoder.max_positions {
            return Err(Error::Config(format!(
                "sequence limit {limit} exceeds encoder max_positions {}",
                self.model.encoder.max_positions
            )));
        }
        self.aif_params(1.0)?;
        let b = &self.baselines;
        if b.knn_k == 0 || b.iterations == 0 || b.vocab_size == 0 || !(b.learning_rate > 0.0) || !(b.l2 >= 0.0) {
            return Err(Error::Config("invalid baseline hyperparameters".into()));
        }
        Ok(())
    }

    /// AIF parameters, using `median` when no explicit `cits_m` is set.
    pub fn aif_params(&self, median: f64) -> Result<AifParams> {
        AifParams::new(self.aif.d, self.aif.cits_m.unwrap_or(median))
    }

    pub fn variant(&self) -> Variant {
        match (self.model.no_fusion, self.loss.alpha == 0.0) {
            (true, _) => Variant::NoFusion,
            (false, true) => Variant::NoSupcon,
            _ => Variant::Full,
        }
    }

    /// Copy of `self` configured as the given ablation variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut cfg = self.clone();
        match variant {
            Variant::Full => cfg.model.no_fusion = false,
            Variant::NoFusion => cfg.model.no_fusion = true,
            Variant::NoSupcon => {
                cfg.model.no_fusion = false;
                cfg.loss.alpha = 0.0;
            }
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ImacConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ImacConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.train.optimizer.learning_rate, 1e-4);
        assert_eq!(cfg.loss.alpha, 0.5);
        assert_eq!(cfg.aif.d, 0.4);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ImacConfig::from_json(r#"{"model": {"encoder": {"d": 16}}, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.model.encoder.d, 16);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn invalid_values_fail_fast() {
        assert!(ImacConfig::from_json(r#"{"loss": {"tau": -1}}"#).is_err());
        assert!(ImacConfig::from_json(r#"{"train": {"batch_size": 0}}"#).is_err());
        assert!(ImacConfig::from_json(r#"{"aif": {"d": 1.5}}"#).is_err());
        assert!(ImacConfig::from_json(r#"{"tokenizer": {"abstract_max_len": 4096}}"#).is_err());
    }

    #[test]
    fn variants() {
        let cfg = ImacConfig::default();
        assert_eq!(cfg.variant(), Variant::Full);
        assert_eq!(cfg.with_variant(Variant::NoSupcon).loss.alpha, 0.0);
        assert!(cfg.with_variant(Variant::NoFusion).model.no_fusion);
        assert_eq!(cfg.with_variant(Variant::NoFusion).variant(), Variant::NoFusion);
    }
}
