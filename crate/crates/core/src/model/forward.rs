use indexmap::IndexMap;

use super::config::{ModelConfig, ScaleMode};
use super::params::{Bound, ModelParams};
use super::ModelError;
use crate::tensor::{LstmWeights, NormMode, RunningStats, Tape, Tensor, Var};

/// Query, key and value maps of one attention head, each `(weight, bias)`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub query: (Var, Var),
    pub key: (Var, Var),
    pub value: (Var, Var),
}

impl HeadVars {
    pub fn from_bound(bound: &Bound, head: usize) -> Self {
        let pair = |part: &str| {
            (
                bound.get(&format!("attn.{head}.{part}.weight")),
                bound.get(&format!("attn.{head}.{part}.bias")),
            )
        };
        HeadVars {
            query: pair("query"),
            key: pair("key"),
            value: pair("value"),
        }
    }
}

/// One scaled dot-product head over `[T, D]` or `[B, T, D]` frames.
/// Returns the head output `[.., T, d_q]` and its attention weights
/// `[.., T, T]` (softmax over the key axis).
pub fn attention_head(tape: &mut Tape, h: Var, head: &HeadVars, scale: ScaleMode) -> Result<(Var, Var), ModelError> {
    let q = tape.linear(h, head.query.0, Some(head.query.1))?;
    let k = tape.linear(h, head.key.0, Some(head.key.1))?;
    let v = tape.linear(h, head.value.0, Some(head.value.1))?;
    let d_q = *tape.shape(q).last().unwrap();
    let scores = tape.matmul(q, k, true, scale.factor(d_q))?;
    let axis = tape.shape(scores).len() - 1;
    let weights = tape.softmax(scores, axis)?;
    let out = tape.matmul(weights, v, false, 1.0)?;
    Ok((out, weights))
}

/// All heads concatenated on the feature axis and mixed by the square map
/// `w_out` (no bias).
pub fn multi_head_attention(
    tape: &mut Tape,
    h: Var,
    heads: &[HeadVars],
    w_out: Var,
    scale: ScaleMode,
) -> Result<(Var, Vec<Var>), ModelError> {
    let mut outs = Vec::with_capacity(heads.len());
    let mut weights = Vec::with_capacity(heads.len());
    for head in heads {
        let (o, w) = attention_head(tape, h, head, scale)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat_last(&outs)? };
    Ok((tape.linear(cat, w_out, None)?, weights))
}

/// Projection layer and classifier on pooled statistics. Returns
/// `(logits, embedding)`.
pub fn classify(tape: &mut Tape, pooled: Var, bound: &Bound) -> Result<(Var, Var), ModelError> {
    let z = tape.linear(pooled, bound.get("proj.weight"), Some(bound.get("proj.bias")))?;
    let embedding = tape.relu(z)?;
    let logits = tape.linear(
        embedding,
        bound.get("classifier.weight"),
        Some(bound.get("classifier.bias")),
    )?;
    Ok((logits, embedding))
}

/// Handles to the interesting intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    pub embedding: Var,
    pub pooled: Var,
    /// Frame sequence `[B, T, D]` entering statistics pooling.
    pub frames: Var,
    /// LSTM output `H^A` `[B, T, H]`, absent for the `resnet` variant.
    pub encoded: Option<Var>,
    /// Attention weights `[B, T, T]`, one per head.
    pub attention: Vec<Var>,
}

struct Ctx<'a> {
    cfg: &'a ModelConfig,
    bound: &'a Bound,
    stats: &'a mut IndexMap<String, RunningStats>,
    mode: NormMode,
}

impl Ctx<'_> {
    fn bn(&mut self, tape: &mut Tape, x: Var, name: &str) -> Result<Var, ModelError> {
        let running = self
            .stats
            .get_mut(name)
            .ok_or_else(|| ModelError::Input(format!("no running statistics for {name}")))?;
        Ok(tape.batchnorm1d(
            x,
            self.bound.get(&format!("{name}.gamma")),
            self.bound.get(&format!("{name}.beta")),
            running,
            self.mode,
            self.cfg.bn_momentum,
            self.cfg.bn_eps,
        )?)
    }

    fn block(&mut self, tape: &mut Tape, x: Var, name: &str) -> Result<Var, ModelError> {
        let w1 = self.bound.get(&format!("{name}.conv1.weight"));
        let w2 = self.bound.get(&format!("{name}.conv2.weight"));
        let y = tape.conv1d(x, w1, None, 1, 1)?;
        let y = self.bn(tape, y, &format!("{name}.bn1"))?;
        let y = tape.relu(y)?;
        let y = tape.conv1d(y, w2, None, 1, 1)?;
        let y = self.bn(tape, y, &format!("{name}.bn2"))?;
        let skip = match self.bound.try_get(&format!("{name}.skip.weight")) {
            Some(w) => tape.conv1d(x, w, Some(self.bound.get(&format!("{name}.skip.bias"))), 1, 0)?,
            None => x,
        };
        let sum = tape.add(y, skip)?;
        Ok(tape.relu(sum)?)
    }
}

/// Full forward pass on `[B, C_in, L]` input.
///
/// In [`NormMode::Train`] the running statistics in `stats` are updated.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    stats: &mut IndexMap<String, RunningStats>,
    input: Var,
    mode: NormMode,
) -> Result<Forward, ModelError> {
    let shape = tape.shape(input).to_vec();
    let stem_w = bound.get("stem.conv.weight");
    let c_in = tape.shape(stem_w)[1];
    match shape[..] {
        [_, c, l] if c == c_in => {
            if cfg.shape_plan(l).is_none() {
                return Err(ModelError::InvalidConfig(vec![format!(
                    "input of length {l} collapses to zero encoder frames"
                )]));
            }
        }
        _ => {
            return Err(ModelError::Input(format!(
                "model input must be [B, {c_in}, L], got {shape:?}"
            )))
        }
    }
    let mut ctx = Ctx { cfg, bound, stats, mode };
    let k = cfg.initial_kernel;
    let x = tape.conv1d(input, stem_w, None, cfg.initial_conv_stride, k / 2)?;
    let x = ctx.bn(tape, x, "stem.bn")?;
    let x = tape.relu(x)?;
    let x = tape.maxpool1d(x, 3, 2, 1)?;
    let x = ctx.block(tape, x, "block1")?;
    let x = ctx.block(tape, x, "block2")?;
    let x = tape.maxpool1d(x, 3, 2, 1)?;
    let x = ctx.block(tape, x, "block3")?;
    let x = tape.maxpool1d(x, 3, 2, 1)?;
    let seq = tape.transpose_last2(x)?;

    let mut encoded = None;
    let mut attention = Vec::new();
    let frames = if cfg.variant.uses_lstm() {
        let w = LstmWeights {
            w_ih: bound.get("lstm.w_ih"),
            w_hh: bound.get("lstm.w_hh"),
            bias: bound.get("lstm.bias"),
        };
        let h = tape.lstm(seq, w, None, None)?;
        encoded = Some(h);
        if cfg.variant.uses_attention() {
            let heads: Vec<HeadVars> = (0..cfg.num_heads).map(|i| HeadVars::from_bound(bound, i)).collect();
            let (a, weights) = multi_head_attention(tape, h, &heads, bound.get("attn.out.weight"), cfg.scale_mode)?;
            attention = weights;
            a
        } else {
            h
        }
    } else {
        seq
    };
    let pooled = tape.statistics_pool(frames, cfg.pool_eps)?;
    let (logits, embedding) = classify(tape, pooled, bound)?;
    Ok(Forward {
        logits,
        embedding,
        pooled,
        frames,
        encoded,
        attention,
    })
}

/// Evaluation-mode outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub logits: Tensor,
    pub embedding: Tensor,
}

impl ModelParams {
    /// Evaluation-mode forward pass without gradient tracking.
    pub fn infer(&self, input: &Tensor) -> Result<Inference, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let mut stats = self.stats().clone();
        let x = tape.constant(input.clone());
        let out = forward(&mut tape, self.config(), &bound, &mut stats, x, NormMode::Eval)?;
        Ok(Inference {
            logits: tape.value(out.logits).clone(),
            embedding: tape.value(out.embedding).clone(),
        })
    }
}
