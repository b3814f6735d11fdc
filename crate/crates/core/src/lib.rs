//! Spoken language identification from raw waveforms.
//!
//! The model is a 1-D convolutional encoder with residual blocks and an LSTM,
//! followed by multi-head self-attention, statistics pooling, a projection
//! layer producing the utterance embedding, and a softmax classifier. Two
//! ablation variants drop the attention block, or both LSTM and attention.
//!
//! Everything runs on a small reverse-mode autodiff engine in [`tensor`].

pub mod tensor;
pub mod audio;
pub mod rng;
pub mod features;
pub mod model;
pub mod training;
pub mod synthdata;
pub mod embedding;
pub mod config;
