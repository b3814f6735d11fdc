//! Synthetic "toy language" corpus.
//!
//! Each class owns three carrier tones on an interleaved log-spaced grid
//! between 200 and 3500 Hz and a syllable-rate amplitude modulation between
//! 2 and 8 Hz. Clips jitter those parameters, randomise phases and add white
//! noise whose level grows with `difficulty`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{encode_wav, ManifestEntry, WaveClip, SAMPLE_RATE};
use crate::rng::stream_rng;

const LOW_HZ: f64 = 200.0;
const HIGH_HZ: f64 = 3500.0;
const PEAK: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic data spec: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub clips_per_class: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub seed: u64,
    /// 0 is noise-free; 1 puts the noise at twice the signal RMS.
    pub difficulty: f64,
    pub eval_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 8,
            clips_per_class: 50,
            min_seconds: 4.0,
            max_seconds: 6.0,
            seed: 0,
            difficulty: 0.2,
            eval_fraction: 0.2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(2..=64).contains(&self.num_classes) {
            errs.push(format!("classes must be in 2..=64, got {}", self.num_classes));
        }
        if self.clips_per_class == 0 {
            errs.push("clips per class must be at least 1".into());
        }
        if !(self.min_seconds > 0.0 && self.min_seconds <= self.max_seconds && self.max_seconds <= 600.0) {
            errs.push(format!(
                "clip length range {}..{} s is invalid",
                self.min_seconds, self.max_seconds
            ));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            errs.push(format!("difficulty must lie in [0, 1], got {}", self.difficulty));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            errs.push(format!("eval fraction must lie in [0, 1), got {}", self.eval_fraction));
        }
        errs
    }

    pub fn label(&self, class_id: usize) -> String {
        format!("lang{class_id:02}")
    }

    /// Clips of each class held out for evaluation.
    pub fn eval_clips(&self) -> usize {
        let n = self.clips_per_class;
        if n < 2 {
            return 0;
        }
        ((n as f64 * self.eval_fraction).round() as usize).clamp(usize::from(self.eval_fraction > 0.0), n - 1)
    }

    /// The three nominal carrier frequencies of a class.
    pub fn carriers(&self, class_id: usize) -> [f64; 3] {
        let k = self.num_classes;
        let grid = |i: usize| LOW_HZ * (HIGH_HZ / LOW_HZ).powf(i as f64 / (3 * k - 1) as f64);
        [grid(class_id), grid(class_id + k), grid(class_id + 2 * k)]
    }

    /// Nominal amplitude-modulation rate of a class in Hz.
    pub fn am_rate(&self, class_id: usize) -> f64 {
        2.0 + 6.0 * class_id as f64 / (self.num_classes - 1) as f64
    }
}

/// Per-clip random stream; independent of generation order.
pub fn clip_rng(seed: u64, class_id: usize, index: usize) -> ChaCha8Rng {
    stream_rng(seed, "synth", &[class_id as u64, index as u64])
}

/// One clip of `class_id`. Samples lie on the 16-bit PCM grid, so writing
/// and re-reading the clip is lossless.
pub fn generate_class_clip<R: Rng + ?Sized>(spec: &SynthSpec, class_id: usize, seconds: f64, rng: &mut R) -> WaveClip {
    assert!(class_id < spec.num_classes, "class {class_id} out of range");
    let n = ((seconds * f64::from(SAMPLE_RATE)).round() as usize).max(1);
    let sr = f64::from(SAMPLE_RATE);
    let tones: Vec<(f64, f64, f64)> = spec
        .carriers(class_id)
        .iter()
        .map(|&f| {
            let freq = f * (1.0 + rng.random_range(-0.02..0.02));
            (freq, rng.random_range(0.6..1.0), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let rate = spec.am_rate(class_id) * (1.0 + rng.random_range(-0.05..0.05));
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let carrier: f64 = tones.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            carrier * (0.55 + 0.45 * (2.0 * PI * rate * t + am_phase).sin())
        })
        .collect();
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let gain = 0.6 / peak;
    let rms = (clean.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt() * gain;
    let noise = Normal::new(0.0, (2.0 * spec.difficulty * rms).max(0.0)).expect("finite noise level");
    let samples = clean
        .iter()
        .map(|&v| {
            let x = (v * gain + noise.sample(rng)).clamp(-PEAK, PEAK);
            ((x * 32768.0).round() / 32768.0) as f32
        })
        .collect();
    WaveClip {
        samples,
        sample_rate: SAMPLE_RATE,
        source_path: String::new(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub train: Vec<ManifestEntry>,
    pub eval: Vec<ManifestEntry>,
}

fn io<'a>(path: &'a Path) -> impl FnOnce(std::io::Error) -> SynthError + 'a {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), SynthError> {
    let mut out = Vec::new();
    for e in entries {
        let line = serde_json::json!({ "path": e.path, "label": e.label });
        writeln!(out, "{line}").expect("write to memory");
    }
    fs::write(path, out).map_err(io(path))
}

/// Writes `wav/<label>/<label>_<index>.wav` files plus `train.jsonl` and
/// `eval.jsonl` (paths relative to `out_dir`). The last clips of every class
/// go to the eval split.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SynthSummary, SynthError> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(SynthError::Invalid(errs));
    }
    let held_out = spec.eval_clips();
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class_id in 0..spec.num_classes {
        let label = spec.label(class_id);
        let dir = out_dir.join("wav").join(&label);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for index in 0..spec.clips_per_class {
            let mut rng = clip_rng(spec.seed, class_id, index);
            let seconds = if spec.max_seconds > spec.min_seconds {
                rng.random_range(spec.min_seconds..spec.max_seconds)
            } else {
                spec.min_seconds
            };
            let clip = generate_class_clip(spec, class_id, seconds, &mut rng);
            let name = format!("{label}_{index:04}.wav");
            let path = dir.join(&name);
            fs::write(&path, encode_wav(&clip.samples, SAMPLE_RATE)).map_err(io(&path))?;
            let entry = ManifestEntry {
                path: format!("wav/{label}/{name}"),
                label: label.clone(),
            };
            if index >= spec.clips_per_class - held_out {
                eval.push(entry);
            } else {
                train.push(entry);
            }
        }
    }
    let train_manifest = out_dir.join("train.jsonl");
    let eval_manifest = out_dir.join("eval.jsonl");
    write_manifest(&train_manifest, &train)?;
    write_manifest(&eval_manifest, &eval)?;
    Ok(SynthSummary {
        train_manifest,
        eval_manifest,
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carriers_are_distinct_and_in_band() {
        let spec = SynthSpec::default();
        let mut all: Vec<f64> = (0..8).flat_map(|c| spec.carriers(c)).collect();
        all.sort_by(f64::total_cmp);
        assert!((all[0] - 200.0).abs() < 1e-9 && (all[23] - 3500.0).abs() < 1e-9);
        assert!(all.windows(2).all(|w| w[1] / w[0] > 1.1));
        assert_eq!(spec.am_rate(0), 2.0);
        assert_eq!(spec.am_rate(7), 8.0);
    }

    #[test]
    fn eval_split_sizes() {
        let mut s = SynthSpec::default();
        assert_eq!(s.eval_clips(), 10);
        s.clips_per_class = 8;
        assert_eq!(s.eval_clips(), 2);
        s.clips_per_class = 2;
        assert_eq!(s.eval_clips(), 1);
        s.clips_per_class = 1;
        assert_eq!(s.eval_clips(), 0);
    }

    #[test]
    fn clips_are_bounded_and_deterministic() {
        let spec = SynthSpec {
            difficulty: 1.0,
            ..SynthSpec::default()
        };
        for class_id in [0, 7] {
            let a = generate_class_clip(&spec, class_id, 1.0, &mut clip_rng(3, class_id, 0));
            let b = generate_class_clip(&spec, class_id, 1.0, &mut clip_rng(3, class_id, 0));
            assert_eq!(a, b);
            assert_eq!(a.samples.len(), 16_000);
            assert!(a.samples.iter().all(|s| s.abs() <= 0.9));
        }
    }
}
