//! Run configuration: one JSON document with a section per module.
//!
//! Missing fields take their defaults, so `{}` is a valid config. Command
//! line flags are applied on top of the loaded file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::models::train::TrainConfig;
use crate::models::{BasicDrumGenConfig, InfillConfig, LocatorConfig};
use crate::novelty::NoveltyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Histogram bins for the overlap-area comparisons.
    pub bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { bins: 50 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub augment: AugmentConfig,
    pub novelty: NoveltyConfig,
    pub basic: BasicDrumGenConfig,
    pub locator: LocatorConfig,
    pub infill: InfillConfig,
    pub train_basic: TrainConfig,
    pub train_locator: TrainConfig,
    pub train_infill: TrainConfig,
    pub decode: DecodeConfig,
    pub metrics: MetricsConfig,
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if self.metrics.bins == 0 {
            return Err(Error::InvalidConfig("metrics.bins must be positive".into()));
        }
        for (name, t) in [
            ("train_basic", &self.train_basic),
            ("train_locator", &self.train_locator),
            ("train_infill", &self.train_infill),
        ] {
            if !(0.0..1.0).contains(&t.val_fraction) {
                return Err(Error::InvalidConfig(format!("{name}.val_fraction must be in [0, 1)")));
            }
            if !(t.lr_start > 0.0 && t.lr_end > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} learning rates must be positive")));
            }
        }
        Ok(())
    }

    /// JSON with object keys in sorted order and no insignificant
    /// whitespace.
    pub fn canonical_json(&self) -> String {
        // serde_json's map type is ordered, so a round trip through Value
        // sorts every object's keys.
        serde_json::to_value(self).expect("config serializes").to_string()
    }

    /// Hex SHA-256 of [`Config::canonical_json`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(Config::from_json_str("{}").unwrap(), Config::default());
        let partial = Config::from_json_str(r#"{"seed": 9, "train_basic": {"epochs": 3}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.train_basic.epochs, 3);
        assert_eq!(partial.train_basic.batch_size, 16);
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = Config::default();
        assert_eq!(base.hash(), Config::default().hash());
        assert_eq!(base.hash().len(), 64);
        let mut a = base.clone();
        a.metrics.bins = 51;
        let mut b = base.clone();
        b.infill.huber_delta = 0.5;
        let mut c = base.clone();
        c.decode.filter.max_silent_bars = 3;
        let hashes = [base.hash(), a.hash(), b.hash(), c.hash()];
        for i in 0..hashes.len() {
            for j in i + 1..hashes.len() {
                assert_ne!(hashes[i], hashes[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            Config::from_json_str(r#"{"metrics": {"bins": 0}}"#),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(Config::from_json_str(r#"{"seed": "x"}"#), Err(Error::InvalidConfig(_))));
        assert!(Config::from_json_str(r#"{"augment": {"instrument_mask_frac": 2.0}}"#).is_err());
    }
}
