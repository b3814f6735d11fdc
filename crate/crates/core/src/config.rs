//! One JSON document describing a whole experiment.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::MfccConfig;
use crate::model::{Frontend, ModelConfig};
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Model, training and feature settings plus data locations. Every section
/// and field is optional in the JSON form; missing values take defaults and
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mfcc: MfccConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON for this schema: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.model.validate();
        errs.extend(self.train.validate());
        if self.model.frontend == Frontend::Mfcc {
            errs.extend(self.mfcc.validate());
            if errs.is_empty() && self.mfcc.frame_count(crate::audio::segment_len(self.train.segment_seconds)).is_none() {
                errs.push(format!(
                    "a {} s segment is shorter than one {} ms MFCC frame",
                    self.train.segment_seconds, self.mfcc.frame_ms
                ));
            }
        }
        errs
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
