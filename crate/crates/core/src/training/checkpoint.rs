//! On-disk layout of a trained model:
//!
//! ```text
//! <dir>/config.json      full run configuration
//! <dir>/params.json      named weight tensors
//! <dir>/tokenizer.json   fitted tokenizer
//! <dir>/normalizer.json  metadata normalizer
//! <dir>/manifest.json    run manifest
//! ```

use std::path::Path;

use super::features::Featurizer;
use super::trainer::{RunManifest, TrainedModel};
use crate::config::ImacConfig;
use crate::corpus::{Normalizer, TextTokenizer};
use crate::fusion::ImacModel;
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write(path, serde_json::to_string_pretty(manifest)? + "\n")
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join(CONFIG_FILE), self.config.to_json()? + "\n")?;
        self.params.save(&dir.join(PARAMS_FILE))?;
        self.featurizer.tokenizer.save(&dir.join(TOKENIZER_FILE))?;
        write(&dir.join(NORMALIZER_FILE), serde_json::to_string_pretty(&self.featurizer.normalizer)?)?;
        write_manifest(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(PARAMS_FILE).is_file() {
            return Err(Error::Config(format!(
                "{} is not a checkpoint directory (no {PARAMS_FILE}); produce one with `imac train`",
                dir.display()
            )));
        }
        let config = ImacConfig::from_json(&read(&dir.join(CONFIG_FILE))?)?;
        let tokenizer = TextTokenizer::load(&dir.join(TOKENIZER_FILE))?;
        let normalizer: Normalizer = serde_json::from_str(&read(&dir.join(NORMALIZER_FILE))?)?;
        let featurizer = Featurizer {
            tokenizer,
            normalizer,
            limits: config.tokenizer,
        };
        let (model, mut params) = ImacModel::init(&config.model, featurizer.vocab_size(), 0)?;
        params.load_into(&dir.join(PARAMS_FILE))?;
        let manifest: RunManifest = serde_json::from_str(&read(&dir.join(MANIFEST_FILE))?)?;
        Ok(Self {
            config,
            model,
            params,
            featurizer,
            manifest,
        })
    }
}
