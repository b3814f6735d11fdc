use serde::{Deserialize, Serialize};

use crate::tensor::window_output_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Residual encoder with statistics pooling straight after the last block.
    Resnet,
    /// Residual encoder followed by the LSTM.
    ResnetLstm,
    /// Full model: encoder, LSTM and multi-head self-attention.
    ResnetLstmMha,
}

impl Variant {
    pub fn uses_lstm(self) -> bool {
        self != Variant::Resnet
    }

    pub fn uses_attention(self) -> bool {
        self == Variant::ResnetLstmMha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    Raw,
    Mfcc,
}

/// Divisor applied to attention scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `Q K^T / sqrt(d_q)`
    Sqrt,
    /// `Q K^T / d_q`
    Linear,
}

impl ScaleMode {
    pub fn factor(self, head_dim: usize) -> f64 {
        match self {
            ScaleMode::Sqrt => 1.0 / (head_dim as f64).sqrt(),
            ScaleMode::Linear => 1.0 / head_dim as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub frontend: Frontend,
    pub initial_filters: usize,
    pub initial_kernel: usize,
    pub initial_conv_stride: usize,
    pub block_channels: [usize; 3],
    pub lstm_hidden: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub projection_dim: usize,
    pub num_classes: usize,
    pub scale_mode: ScaleMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub pool_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::ResnetLstmMha,
            frontend: Frontend::Raw,
            initial_filters: 64,
            initial_kernel: 7,
            initial_conv_stride: 4,
            block_channels: [64, 128, 256],
            lstm_hidden: 256,
            num_heads: 8,
            head_dim: 32,
            projection_dim: 256,
            num_classes: 8,
            scale_mode: ScaleMode::Sqrt,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            pool_eps: 1e-8,
        }
    }
}

/// Per-stage sequence lengths and feature widths for one input length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub input_len: usize,
    pub after_stem: usize,
    pub after_pool1: usize,
    pub after_pool2: usize,
    /// Encoder output frames `T`.
    pub frames: usize,
    /// Width of the frame sequence entering statistics pooling.
    pub frame_dim: usize,
    pub pooled_dim: usize,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn attention_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Width of the per-frame features that get pooled.
    pub fn frame_dim(&self) -> usize {
        match self.variant {
            Variant::Resnet => self.block_channels[2],
            Variant::ResnetLstm => self.lstm_hidden,
            Variant::ResnetLstmMha => self.attention_dim(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = [
            ("initial_filters", self.initial_filters),
            ("initial_kernel", self.initial_kernel),
            ("initial_conv_stride", self.initial_conv_stride),
            ("lstm_hidden", self.lstm_hidden),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("projection_dim", self.projection_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                errs.push(format!("model.{name} must be at least 1"));
            }
        }
        if self.block_channels.contains(&0) {
            errs.push("model.block_channels must all be positive".into());
        }
        if self.initial_kernel.is_multiple_of(2) {
            errs.push(format!("model.initial_kernel must be odd, got {}", self.initial_kernel));
        }
        if self.num_classes < 2 {
            errs.push(format!("model.num_classes must be at least 2, got {}", self.num_classes));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            errs.push("model.bn_momentum must lie in (0, 1]".into());
        }
        if !(self.bn_eps > 0.0) || !(self.pool_eps > 0.0) {
            errs.push("model.bn_eps and model.pool_eps must be positive".into());
        }
        errs
    }

    /// Walks an input of `input_len` samples (or MFCC frames) through every
    /// stride of the encoder. `None` when the sequence collapses.
    pub fn shape_plan(&self, input_len: usize) -> Option<ShapePlan> {
        let pool = |l| window_output_len(l, 3, 2, 1);
        let after_stem = window_output_len(
            input_len,
            self.initial_kernel,
            self.initial_conv_stride,
            self.initial_kernel / 2,
        )?;
        let after_pool1 = pool(after_stem)?;
        let after_pool2 = pool(after_pool1)?;
        let frames = pool(after_pool2)?;
        Some(ShapePlan {
            input_len,
            after_stem,
            after_pool1,
            after_pool2,
            frames,
            frame_dim: self.frame_dim(),
            pooled_dim: 2 * self.frame_dim(),
            embedding_dim: self.projection_dim,
            num_classes: self.num_classes,
        })
    }
}
