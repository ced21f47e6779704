//! The TOML run configuration shared by every command.
//!
//! Sections: `[model]`, `[train]`, `[phantom]`, `[data]` and the top-level
//! `output_dir`. Every key has a default and unknown keys are errors. The
//! config hash is the SHA-256 of the canonical serialisation, so two files
//! that differ only in layout, comments or omitted defaults hash equally.

use crate::data::PhantomSpec;
use crate::model::ModelConfig;
use crate::trainkit::TrainConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Synthetic dataset size and the held-out split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Pairs synthesised when no manifest is given.
    pub pairs: usize,
    /// The last `holdout` pairs are kept out of training for evaluation.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { pairs: 12, holdout: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            phantom: PhantomSpec::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `train.manifest` is taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        if let (Some(m), Some(dir)) = (&cfg.train.manifest, path.parent()) {
            cfg.train.manifest = Some(dir.join(m));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.phantom.validate()?;
        self.model.check_size(self.phantom.size, self.phantom.size)?;
        if !self.phantom.size.is_multiple_of(self.model.scale_factor) {
            return Err(Error::Config(format!("phantom size {} is not divisible by scale {}", self.phantom.size, self.model.scale_factor)));
        }
        if self.data.pairs == 0 || self.data.holdout >= self.data.pairs {
            return Err(Error::Config(format!("holdout {} must be smaller than pairs {}", self.data.holdout, self.data.pairs)));
        }
        Ok(())
    }

    /// Every key written out in a fixed order.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`], with
    /// `output_dir` left out so the same experiment hashes alike wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let located = RunConfig { output_dir: PathBuf::new(), ..self.clone() };
        let digest = Sha256::digest(located.canonical()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn canonical_form_round_trips_and_fixes_the_hash() {
        let cfg = RunConfig::from_toml("[model]\nbase_channels = 8\n[train]\nlr = 1e-3\n").unwrap();
        let text = cfg.canonical().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let spaced = RunConfig::from_toml("# comment\n[train]\nlr = 0.001\n\n[model]\nbase_channels=8\n").unwrap();
        assert_eq!(spaced.hash().unwrap(), cfg.hash().unwrap());
        assert_ne!(RunConfig::default().hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 16);
        let moved = RunConfig { output_dir: "elsewhere".into(), ..cfg.clone() };
        assert_eq!(moved.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[train]\nlearning_rate = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn inconsistent_values_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nscale_factor = 3\n").is_err());
        assert!(RunConfig::from_toml("[data]\npairs = 2\nholdout = 2\n").is_err());
        assert!(RunConfig::from_toml("[phantom]\nsize = 60\n").is_err());
    }
}
