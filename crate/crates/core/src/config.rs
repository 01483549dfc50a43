//! Single configuration document: detector thresholds, episode and reward settings,
//! training hyperparameters. TOML by default, JSON when the file ends in `.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::TrainConfig;
use crate::env::EpisodeConfig;
use crate::insight::DetectorConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub detectors: DetectorConfig,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config field `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(s)
            .map_err(|e| ConfigError::Parse { path: String::new(), message: e.message().to_string() })?;
        let cfg: EngineConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError::Parse { path: e.path().to_string(), message: e.inner().message().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(s);
        let cfg: EngineConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ConfigError::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ep = &self.episode;
        if !(ep.stage_ratio > 0.0 && ep.stage_ratio <= 1.0) {
            return Err(ConfigError::Invalid(format!("episode.stage_ratio must be in (0, 1], got {}", ep.stage_ratio)));
        }
        let w = &ep.weights;
        for (name, v) in [("eta1", w.eta1), ("eta2", w.eta2), ("eta3", w.eta3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("episode.weights.{name} must be non-negative, got {v}")));
            }
        }
        if !(w.gamma > 0.0 && w.gamma <= 1.0) {
            return Err(ConfigError::Invalid(format!("episode.weights.gamma must be in (0, 1], got {}", w.gamma)));
        }
        let d = &self.detectors;
        if !(d.alpha > 0.0 && d.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("detectors.alpha must be in (0, 1), got {}", d.alpha)));
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
