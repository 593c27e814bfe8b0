//! Run configuration: every tunable in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::dsp::SpectrogramConfig;
use crate::error::{RaclError, Result};
use crate::features::FeatureConfig;
use crate::losses::RaclWeights;
use crate::model::{HeadConfig, OptimizerConfig, TrainingConfig};

pub const SEED_ENV: &str = "RACL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    /// Every clip is truncated or circularly padded to this many samples.
    pub target_len: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            target_len: 64_600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    /// Whether reconstructed dev clips join the validation set.
    pub include_dev: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { include_dev: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub audio: AudioConfig,
    pub spectrogram: SpectrogramConfig,
    pub reconstruct: ReconstructConfig,
    pub features: FeatureConfig,
    pub head: HeadConfig,
    pub losses: RaclWeights,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 688,
            audio: AudioConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            reconstruct: ReconstructConfig::default(),
            features: FeatureConfig::default(),
            head: HeadConfig::default(),
            losses: RaclWeights::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| RaclError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(RaclError::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| RaclError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            RaclError::Config(msg) => RaclError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `RACL_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| RaclError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let sr = self.audio.sample_rate;
        if sr == 0 || self.audio.target_len == 0 {
            return Err(RaclError::Config("audio.sample_rate and audio.target_len must be positive".into()));
        }
        self.spectrogram.validate(sr)?;
        self.features.validate(sr)?;
        if self.features.frames(self.audio.target_len) == 0 {
            return Err(RaclError::Config(format!(
                "audio.target_len {} is shorter than features.fft_size {}",
                self.audio.target_len, self.features.fft_size
            )));
        }
        if self.audio.target_len < self.spectrogram.fft_size {
            return Err(RaclError::Config("audio.target_len is shorter than spectrogram.fft_size".into()));
        }
        if self.head.hidden == 0 || self.head.embedding == 0 {
            return Err(RaclError::Config("head.hidden and head.embedding must be positive".into()));
        }
        self.losses.validate()?;
        self.optimizer.validate()?;
        self.training.validate()?;
        self.augment.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    /// Hash of the settings that reconstructed audio depends on, so derived
    /// corpora can be shared between runs that differ only in training.
    pub fn data_hash(&self) -> String {
        let doc = serde_json::json!({
            "seed": self.seed,
            "audio": self.audio,
            "spectrogram": self.spectrogram,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    /// Zeroes the weights of the named loss terms (`std`, `enh`, `reg`).
    pub fn ablate(&mut self, terms: &[String]) -> Result<()> {
        for t in terms {
            match t.trim() {
                "std" => self.losses.alpha = 0.0,
                "enh" => self.losses.beta = 0.0,
                "reg" => self.losses.gamma = 0.0,
                "" => {}
                other => {
                    return Err(RaclError::Config(format!(
                        "unknown ablation term {other:?}; expected std, enh or reg"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Errors unless `found` matches the current config hash.
pub fn check_hash(artifact: &str, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(RaclError::ConfigMismatch {
            artifact: artifact.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 688);
        assert_eq!(cfg.training.epochs, 100);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"seed": 1, "bogus": true}"#).unwrap_err();
        assert!(err.is_config());
        let err = RunConfig::from_json(r#"{"losses": {"alpha": 0.5, "alfa": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("alfa"));
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"training": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, 32);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn ablation_zeroes_weights() {
        let mut cfg = RunConfig::default();
        cfg.ablate(&["std".into(), "enh".into(), "reg".into()]).unwrap();
        assert_eq!((cfg.losses.alpha, cfg.losses.beta, cfg.losses.gamma), (0.0, 0.0, 0.0));
        assert!(cfg.ablate(&["cls".into()]).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let mut cfg = RunConfig::default();
        cfg.losses.alpha = 0.95;
        assert!(cfg.validate().unwrap_err().is_config());
        let mut cfg = RunConfig::default();
        cfg.audio.target_len = 100;
        assert!(cfg.validate().unwrap_err().to_string().contains("target_len"));
    }
}
