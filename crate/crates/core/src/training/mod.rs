//! Cross-entropy training with Adam, and evaluation reports.

mod adam;
mod metrics;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::VocabularyError;
use crate::features::FeatureError;
use crate::model::{CheckpointError, ModelError};

pub use adam::{adam_step, adam_step_model, AdamConfig, AdamState};
pub use metrics::{argmax, ClassMetrics, EvalReport, MetricsAccumulator};
pub use train::{
    evaluate, evaluate_params, model_input, train, train_to_dir, BestCheckpoint, EpochMetrics, TrainEvent,
    TrainOutcome, EVAL_BATCH,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            epochs: 25,
            batch_size: 64,
            segment_seconds: 4.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            errs.push(format!("train.betas must lie in [0, 1), got {:?}", self.betas));
        }
        if !(self.eps > 0.0) {
            errs.push("train.eps must be positive".into());
        }
        if self.epochs == 0 {
            errs.push("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        if !(self.segment_seconds > 0.0 && self.segment_seconds <= 600.0) {
            errs.push(format!(
                "train.segment_seconds must lie in (0, 600], got {}",
                self.segment_seconds
            ));
        }
        errs
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}
