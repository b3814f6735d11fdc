//! MFCC front end: pre-emphasis, Hamming-windowed framing, power spectrum,
//! HTK mel filterbank, log compression, orthonormal DCT-II and regression
//! deltas.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("signal of {samples} samples is shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed feature dump: {0}")]
    MalformedDump(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub shift_ms: f64,
    pub num_ceps: usize,
    pub num_mel_filters: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub include_deltas: bool,
    pub delta_window: usize,
    pub log_floor: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Subtract the per-utterance mean of each static coefficient.
    pub mean_normalize: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16_000,
            frame_ms: 25.0,
            shift_ms: 10.0,
            num_ceps: 13,
            num_mel_filters: 26,
            fft_size: 512,
            preemphasis: 0.97,
            include_deltas: true,
            delta_window: 2,
            log_floor: 1e-10,
            low_hz: 0.0,
            high_hz: 8000.0,
            mean_normalize: false,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn frame_shift(&self) -> usize {
        (self.shift_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    /// Feature dimension per frame (39 with deltas under defaults).
    pub fn feature_dim(&self) -> usize {
        if self.include_deltas {
            3 * self.num_ceps
        } else {
            self.num_ceps
        }
    }

    /// Frames produced for `samples` input samples, if at least one fits.
    pub fn frame_count(&self, samples: usize) -> Option<usize> {
        let f = self.frame_len();
        (samples >= f).then(|| (samples - f) / self.frame_shift() + 1)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sample_rate == 0 {
            errs.push("mfcc.sample_rate must be positive".to_string());
        }
        if self.frame_len() == 0 || self.frame_shift() == 0 {
            errs.push("mfcc.frame_ms and mfcc.shift_ms must cover at least one sample".into());
        }
        if self.frame_len() > self.fft_size {
            errs.push(format!(
                "mfcc frame of {} samples exceeds fft_size {}",
                self.frame_len(),
                self.fft_size
            ));
        }
        if self.num_ceps == 0 || self.num_ceps > self.num_mel_filters {
            errs.push(format!(
                "mfcc.num_ceps {} must be in 1..={}",
                self.num_ceps, self.num_mel_filters
            ));
        }
        if !(self.low_hz >= 0.0 && self.low_hz < self.high_hz && self.high_hz <= f64::from(self.sample_rate) / 2.0) {
            errs.push(format!(
                "mfcc band {}..{} Hz must lie within 0..Nyquist",
                self.low_hz, self.high_hz
            ));
        }
        if self.log_floor <= 0.0 {
            errs.push("mfcc.log_floor must be positive".into());
        }
        if self.delta_window == 0 {
            errs.push("mfcc.delta_window must be at least 1".into());
        }
        errs
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Pre-emphasised, Hamming-windowed frames `[T_f, frame_len]`.
pub fn frame_signal(samples: &[f64], cfg: &MfccConfig) -> Result<Tensor, FeatureError> {
    let frame = cfg.frame_len();
    let shift = cfg.frame_shift();
    let count = cfg.frame_count(samples.len()).ok_or(FeatureError::TooShort {
        samples: samples.len(),
        frame,
    })?;
    let emphasised: Vec<f64> = (0..samples.len())
        .map(|i| {
            if i == 0 {
                samples[0] * (1.0 - cfg.preemphasis)
            } else {
                samples[i] - cfg.preemphasis * samples[i - 1]
            }
        })
        .collect();
    let window = hamming(frame);
    let mut data = Vec::with_capacity(count * frame);
    for t in 0..count {
        let start = t * shift;
        data.extend(emphasised[start..start + frame].iter().zip(&window).map(|(x, w)| x * w));
    }
    Ok(Tensor::new([count, frame], data).expect("frame shape"))
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable MFCC pipeline with precomputed FFT plan, filterbank and DCT.
pub struct MfccExtractor {
    cfg: MfccConfig,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
    dct: Vec<Vec<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: &MfccConfig) -> Result<Self, FeatureError> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(FeatureError::InvalidConfig(errs.join("; ")));
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let bins = cfg.fft_size / 2 + 1;
        let m = cfg.num_mel_filters;
        let (lo, hi) = (hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz));
        let edges: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (m + 1) as f64))
            .collect();
        let bin_hz = f64::from(cfg.sample_rate) / cfg.fft_size as f64;
        let filterbank = (0..m)
            .map(|j| {
                let (l, c, r) = (edges[j], edges[j + 1], edges[j + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f >= l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f <= r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let dct = (0..cfg.num_ceps)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
                (0..m)
                    .map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * m) as f64).cos())
                    .collect()
            })
            .collect();
        Ok(MfccExtractor {
            cfg: cfg.clone(),
            fft,
            filterbank,
            centers_hz: edges[1..=m].to_vec(),
            dct,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn filter_centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// `|FFT|^2` of a zero-padded frame, bins `0..=fft_size/2`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn mel_energies(&self, power: &[f64]) -> Vec<f64> {
        self.filterbank
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Static cepstra `[T_f, num_ceps]`.
    pub fn static_mfcc(&self, samples: &[f64]) -> Result<Tensor, FeatureError> {
        let frames = frame_signal(samples, &self.cfg)?;
        let (count, flen) = (frames.shape()[0], frames.shape()[1]);
        let nc = self.cfg.num_ceps;
        let mut out = Vec::with_capacity(count * nc);
        for t in 0..count {
            let frame = &frames.data()[t * flen..(t + 1) * flen];
            let logmel: Vec<f64> = self
                .mel_energies(&self.power_spectrum(frame))
                .into_iter()
                .map(|e| e.max(self.cfg.log_floor).ln())
                .collect();
            out.extend(
                self.dct
                    .iter()
                    .map(|row| row.iter().zip(&logmel).map(|(a, b)| a * b).sum::<f64>()),
            );
        }
        if self.cfg.mean_normalize {
            for c in 0..nc {
                let mean = (0..count).map(|t| out[t * nc + c]).sum::<f64>() / count as f64;
                (0..count).for_each(|t| out[t * nc + c] -= mean);
            }
        }
        Ok(Tensor::new([count, nc], out).expect("mfcc shape"))
    }

    /// Full feature matrix `[T_f, feature_dim]`.
    pub fn extract(&self, samples: &[f64]) -> Result<Tensor, FeatureError> {
        let s = self.static_mfcc(samples)?;
        Ok(if self.cfg.include_deltas {
            add_deltas(&s, self.cfg.delta_window)
        } else {
            s
        })
    }

    /// Converts raw `[B, 1, L]` segments into channel-major features
    /// `[B, feature_dim, T_f]` for the convolutional encoder.
    pub fn batch_features(&self, raw: &Tensor) -> Result<Tensor, FeatureError> {
        let (b, len) = (raw.shape()[0], raw.shape()[raw.ndim() - 1]);
        let dim = self.cfg.feature_dim();
        let frames = self.cfg.frame_count(len).ok_or(FeatureError::TooShort {
            samples: len,
            frame: self.cfg.frame_len(),
        })?;
        let mut out = vec![0.0; b * dim * frames];
        for i in 0..b {
            let f = self.extract(&raw.data()[i * len..(i + 1) * len])?;
            for t in 0..frames {
                for d in 0..dim {
                    out[(i * dim + d) * frames + t] = f.data()[t * dim + d];
                }
            }
        }
        Ok(Tensor::new([b, dim, frames], out).expect("feature batch shape"))
    }
}

/// Appends regression deltas and delta-deltas over `+-window` frames with
/// edge replication: `[T, D] -> [T, 3D]`.
pub fn add_deltas(features: &Tensor, window: usize) -> Tensor {
    let (t_len, d) = (features.shape()[0], features.shape()[1]);
    let delta = regression_delta(features.data(), t_len, d, window);
    let delta2 = regression_delta(&delta, t_len, d, window);
    let mut out = Vec::with_capacity(t_len * 3 * d);
    for t in 0..t_len {
        out.extend_from_slice(&features.data()[t * d..(t + 1) * d]);
        out.extend_from_slice(&delta[t * d..(t + 1) * d]);
        out.extend_from_slice(&delta2[t * d..(t + 1) * d]);
    }
    Tensor::new([t_len, 3 * d], out).expect("delta shape")
}

fn regression_delta(x: &[f64], t_len: usize, d: usize, window: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize, j: usize| x[(t.clamp(0, t_len as isize - 1) as usize) * d + j];
    let mut out = vec![0.0; t_len * d];
    for t in 0..t_len as isize {
        for j in 0..d {
            let mut num = 0.0;
            for n in 1..=window as isize {
                num += n as f64 * (at(t + n, j) - at(t - n, j));
            }
            out[t as usize * d + j] = num / denom;
        }
    }
    out
}

/// Serialises `[T, D]` features: `u32 T`, `u32 D`, then `T*D` little-endian
/// `f32` values in row-major order.
pub fn encode_feature_dump(features: &Tensor) -> Vec<u8> {
    assert_eq!(features.ndim(), 2, "feature dump needs a matrix");
    let mut out = Vec::with_capacity(8 + 4 * features.numel());
    out.extend_from_slice(&(features.shape()[0] as u32).to_le_bytes());
    out.extend_from_slice(&(features.shape()[1] as u32).to_le_bytes());
    for &v in features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_dump(bytes: &[u8]) -> Result<Tensor, FeatureError> {
    if bytes.len() < 8 {
        return Err(FeatureError::MalformedDump("header shorter than 8 bytes".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FeatureError::MalformedDump("dimensions overflow".into()))?;
    if rows == 0 || cols == 0 || body.len() != want {
        return Err(FeatureError::MalformedDump(format!(
            "header {rows}x{cols} needs {want} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Tensor::new([rows, cols], data).map_err(|e| FeatureError::MalformedDump(e.to_string()))
}
