//! Binary checkpoint format.
//!
//! ```text
//! "RLIDCKPT"                     8-byte magic
//! u32  version                    currently 1
//! u64  header length, then UTF-8 JSON header
//! u32  tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 ndim, ndim x u64 dims
//!   prod(dims) x f32 values
//! ```
//!
//! All integers and floats are little-endian. Batch-norm running statistics
//! are stored as tensors named `stats.<layer>.mean` / `stats.<layer>.var`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{Frontend, ModelConfig};
use super::params::{batchnorm_layers, ModelParams};
use crate::audio::Vocabulary;
use crate::features::MfccConfig;
use crate::tensor::{RunningStats, Tensor};

pub const MAGIC: &[u8; 8] = b"RLIDCKPT";
pub const VERSION: u32 = 1;
const INIT_SCHEME: &str =
    "conv/linear weights U(+-1/sqrt(fan_in)), biases 0; lstm U(+-1/sqrt(H)), forget bias 1; bn gamma 1 beta 0";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Trained model together with everything needed to reuse it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub labels: Vocabulary,
    /// Present when the model consumes MFCC features.
    pub mfcc: Option<MfccConfig>,
    pub seed: u64,
    pub segment_seconds: f64,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    input_channels: usize,
    labels: Vocabulary,
    mfcc: Option<MfccConfig>,
    seed: u64,
    segment_seconds: f64,
    epoch: usize,
    init: String,
    tracked: BTreeMap<String, u64>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let p = &self.params;
        let header = Header {
            model: p.config().clone(),
            input_channels: p.input_channels(),
            labels: self.labels.clone(),
            mfcc: self.mfcc.clone(),
            seed: self.seed,
            segment_seconds: self.segment_seconds,
            epoch: self.epoch,
            init: INIT_SCHEME.to_string(),
            tracked: p.stats().iter().map(|(k, s)| (k.clone(), s.tracked)).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);

        let mut blobs: Vec<(String, Vec<usize>, &[f64])> = p
            .weights()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data()))
            .collect();
        for (n, s) in p.stats() {
            blobs.push((format!("stats.{n}.mean"), vec![s.mean.len()], &s.mean));
            blobs.push((format!("stats.{n}.var"), vec![s.var.len()], &s.var));
        }
        out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for (name, shape, data) in blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes };
        if r.take(8, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = r.u64("header length")?;
        let header_len = usize::try_from(header_len).map_err(|_| CheckpointError::Truncated("header"))?;
        let header: Header =
            serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;

        let count = r.u32("tensor count")? as usize;
        // every tensor needs at least its two length fields
        if count > r.buf.len() / 8 {
            return Err(CheckpointError::Truncated("tensor table"));
        }
        let mut tensors = IndexMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32("tensor rank")? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(CheckpointError::Malformed(format!("tensor {name} has rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = r.u64("tensor dims")?;
                shape.push(usize::try_from(d).map_err(|_| CheckpointError::Truncated("tensor data"))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} has shape {shape:?}")))?;
            let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated("tensor data"))?, "tensor data")?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Malformed(format!("tensor {name} holds non-finite values")));
            }
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate tensor {name}")));
            }
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.buf.len())));
        }
        Self::assemble(header, tensors)
    }

    fn assemble(header: Header, mut tensors: IndexMap<String, Tensor>) -> Result<Self, CheckpointError> {
        let malformed = CheckpointError::Malformed;
        if header.labels.len() != header.model.num_classes {
            return Err(malformed(format!(
                "{} labels for {} classes",
                header.labels.len(),
                header.model.num_classes
            )));
        }
        if Vocabulary::from_labels(header.labels.labels()) != header.labels {
            return Err(malformed("labels must be sorted and unique".into()));
        }
        let want_channels = match (header.model.frontend, &header.mfcc) {
            (Frontend::Raw, None) => 1,
            (Frontend::Mfcc, Some(m)) => m.feature_dim(),
            _ => return Err(malformed("MFCC settings do not match the model front end".into())),
        };
        if header.input_channels != want_channels {
            return Err(malformed(format!(
                "input channels {} do not match the front end ({want_channels})",
                header.input_channels
            )));
        }
        if !(header.segment_seconds > 0.0 && header.segment_seconds.is_finite()) {
            return Err(malformed(format!("segment length {}", header.segment_seconds)));
        }
        let mut stats = IndexMap::new();
        for (name, _) in batchnorm_layers(&header.model) {
            let mut take = |part: &str| {
                tensors
                    .shift_remove(&format!("stats.{name}.{part}"))
                    .map(Tensor::into_data)
                    .ok_or_else(|| malformed(format!("missing running statistics for {name}")))
            };
            let (mean, var) = (take("mean")?, take("var")?);
            let tracked = *header
                .tracked
                .get(&name)
                .ok_or_else(|| malformed(format!("missing batch count for {name}")))?;
            stats.insert(name, RunningStats { mean, var, tracked });
        }
        let params = ModelParams::from_parts(header.model, header.input_channels, tensors, stats)
            .map_err(|e| malformed(e.to_string()))?;
        Ok(Checkpoint {
            params,
            labels: header.labels,
            mfcc: header.mfcc,
            seed: header.seed,
            segment_seconds: header.segment_seconds,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let cfg = ModelConfig {
            initial_filters: 2,
            block_channels: [2, 3, 4],
            lstm_hidden: 4,
            num_heads: 2,
            head_dim: 2,
            projection_dim: 3,
            num_classes: 2,
            ..ModelConfig::default()
        };
        Checkpoint {
            params: ModelParams::init(&cfg, 1, 1).unwrap(),
            labels: Vocabulary::from_labels(&["a", "b"]),
            mfcc: None,
            seed: 1,
            segment_seconds: 2.0,
            epoch: 0,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = tiny();
        assert_eq!(Checkpoint::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = tiny().encode();
        assert!(matches!(Checkpoint::decode(&bytes[..5]), Err(CheckpointError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::UnsupportedVersion(9))));
        for cut in [bytes.len() - 1, bytes.len() - 300] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err());
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::decode(&long), Err(CheckpointError::Malformed(_))));
    }
}
