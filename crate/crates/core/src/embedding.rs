//! Utterance-embedding export, exact t-SNE and cluster quality scores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{segment_len, BatchIterator, CropMode, ManifestEntry};
use crate::model::Checkpoint;
use crate::rng::stream_seed;
use crate::tensor::Tensor;
use crate::training::{model_input, TrainError};

/// Largest point count accepted by the exact O(N^2) t-SNE.
pub const MAX_TSNE_POINTS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("t-SNE needs more than 3 x perplexity points: {points} points, perplexity {perplexity}")]
    TooFewPoints { points: usize, perplexity: f64 },
    #[error("exact t-SNE is limited to {MAX_TSNE_POINTS} points, got {0}")]
    TooManyPoints(usize),
    #[error("invalid t-SNE settings: {0}")]
    InvalidConfig(String),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("field contains a tab or newline: {0:?}")]
    UnwritableField(String),
}

/// Vectors with their labels and source files, one row per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Tensor,
    pub labels: Vec<String>,
    pub paths: Vec<String>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }
}

/// Projection-layer outputs for one centre crop of every readable file.
/// `segment_seconds` defaults to the checkpoint's training crop length.
pub fn extract_embeddings(
    checkpoint: &Checkpoint,
    entries: &[ManifestEntry],
    segment_seconds: Option<f64>,
    batch_size: usize,
) -> Result<EmbeddingSet, TrainError> {
    checkpoint.labels.check_covers(entries)?;
    let extractor = match &checkpoint.mfcc {
        Some(m) => Some(crate::features::MfccExtractor::new(m)?),
        None => None,
    };
    let seconds = segment_seconds.unwrap_or(checkpoint.segment_seconds);
    let mut it = BatchIterator::new(
        entries,
        &checkpoint.labels,
        batch_size,
        segment_len(seconds),
        0,
        0,
        false,
        CropMode::Center,
    )?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut paths = Vec::new();
    let mut dim = checkpoint.params.config().projection_dim;
    for batch in &mut it {
        let out = checkpoint.params.infer(&model_input(&batch.data, extractor.as_ref())?)?;
        dim = out.embedding.shape()[1];
        data.extend_from_slice(out.embedding.data());
        for (&l, p) in batch.labels.iter().zip(batch.paths) {
            labels.push(checkpoint.labels.label(l).expect("label index").to_string());
            paths.push(p);
        }
    }
    if labels.is_empty() {
        return Err(TrainError::Data("no readable files to embed".into()));
    }
    Ok(EmbeddingSet {
        vectors: Tensor::new([labels.len(), dim], data).expect("embedding shape"),
        labels,
        paths,
    })
}

fn check_field(s: &str) -> Result<&str, EmbeddingError> {
    if s.contains(['\t', '\n', '\r']) {
        Err(EmbeddingError::UnwritableField(s.to_string()))
    } else {
        Ok(s)
    }
}

/// `label, path, v0 .. v{D-1}` per row, tab separated, after a header line.
/// Values use the shortest representation that parses back exactly.
pub fn write_embeddings_tsv(set: &EmbeddingSet) -> Result<String, EmbeddingError> {
    let d = set.dim();
    let mut out = String::from("label\tpath");
    for j in 0..d {
        out += &format!("\te{j}");
    }
    out.push('\n');
    for i in 0..set.len() {
        out += check_field(&set.labels[i])?;
        out.push('\t');
        out += check_field(&set.paths[i])?;
        for v in set.vectors.row(i) {
            out += &format!("\t{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_float(s: &str, line: usize) -> Result<f64, EmbeddingError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(EmbeddingError::Malformed {
            line,
            message: format!("not a finite number: {s:?}"),
        }),
    }
}

pub fn parse_embeddings_tsv(text: &str) -> Result<EmbeddingSet, EmbeddingError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let malformed = |line: usize, message: String| EmbeddingError::Malformed { line: line + 1, message };
    let Some((hl, header)) = lines.next() else {
        return Err(malformed(0, "empty embedding file".into()));
    };
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[0] != "label" || cols[1] != "path" {
        return Err(malformed(hl, "header must start with label, path".into()));
    }
    let d = cols.len() - 2;
    let (mut data, mut labels, mut paths) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != d + 2 {
            return Err(malformed(n, format!("expected {} fields, found {}", d + 2, fields.len())));
        }
        labels.push(fields[0].to_string());
        paths.push(fields[1].to_string());
        for f in &fields[2..] {
            data.push(parse_float(f, n + 1)?);
        }
    }
    if labels.is_empty() {
        return Err(malformed(hl, "no embedding rows".into()));
    }
    Ok(EmbeddingSet {
        vectors: Tensor::new([labels.len(), d], data).expect("rows checked"),
        labels,
        paths,
    })
}

/// `x, y, label, path` per row after a header line.
pub fn write_projection_tsv(coords: &Tensor, set: &EmbeddingSet) -> Result<String, EmbeddingError> {
    let mut out = String::from("x\ty\tlabel\tpath\n");
    for i in 0..set.len() {
        let r = coords.row(i);
        out += &format!(
            "{}\t{}\t{}\t{}\n",
            r[0],
            r[1],
            check_field(&set.labels[i])?,
            check_field(&set.paths[i])?
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    /// Centred 2-D coordinates `[N, 2]`.
    pub coords: Tensor,
    /// `(iteration, KL(P || Q))` for the final 100 iterations.
    pub kl_history: Vec<(usize, f64)>,
    /// Entropy in bits of every conditional distribution after the
    /// bandwidth search.
    pub entropies: Vec<f64>,
}

/// Squared Euclidean distances between the rows of `x`.
pub fn pairwise_sq_distances(x: &Tensor) -> Vec<f64> {
    let n = x.shape()[0];
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Row-conditional neighbour distributions `p_{j|i}` (row-major `[N, N]`)
/// whose entropies match `log2(perplexity)` bits, found by bisection on
/// each point's precision. Returns the matrix and the achieved entropies.
pub fn conditional_probabilities(dist2: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let row = &dist2[i * n..(i + 1) * n];
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut h = 0.0;
        let dst = &mut p[i * n..(i + 1) * n];
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                let v = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                dst[j] = v;
                sum += v;
                weighted += (row[j] - dmin) * v;
            }
            // H = ln(sum) + beta * E[d - dmin], in nats
            h = sum.ln() + beta * weighted / sum;
            dst.iter_mut().for_each(|v| *v /= sum);
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        entropies[i] = h / std::f64::consts::LN_2;
    }
    (p, entropies)
}

/// KL divergence between joint affinities `p` and the Student-t
/// similarities of `y`.
fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[i * n + j] / z).max(1e-300);
                kl += p[i * n + j] * (p[i * n + j] / q).ln();
            }
        }
    }
    kl
}

/// Exact t-SNE of the rows of `x` into two dimensions.
pub fn tsne_2d(x: &Tensor, cfg: &TsneConfig) -> Result<TsneResult, EmbeddingError> {
    if x.ndim() != 2 {
        return Err(EmbeddingError::InvalidConfig(format!("input must be [N, D], got {:?}", x.shape())));
    }
    let n = x.shape()[0];
    if !(cfg.perplexity > 0.0) || !(cfg.learning_rate > 0.0) || cfg.iterations == 0 {
        return Err(EmbeddingError::InvalidConfig(
            "perplexity, learning rate and iterations must be positive".into(),
        ));
    }
    if n as f64 <= 3.0 * cfg.perplexity {
        return Err(EmbeddingError::TooFewPoints {
            points: n,
            perplexity: cfg.perplexity,
        });
    }
    if n > MAX_TSNE_POINTS {
        return Err(EmbeddingError::TooManyPoints(n));
    }
    if !x.is_finite() {
        return Err(EmbeddingError::NonFinite);
    }
    let (cond, entropies) = conditional_probabilities(&pairwise_sq_distances(x), n, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "tsne", &[]));
    let normal = Normal::new(0.0, 1e-2).expect("valid");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl_history = Vec::new();
    let track_from = cfg.iterations.saturating_sub(100);
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iterations { cfg.initial_momentum } else { cfg.final_momentum };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                gx += w * (y[2 * i] - y[2 * j]);
                gy += w * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        if it >= track_from {
            kl_history.push((it, kl_divergence(&p, &y, n)));
        }
    }
    Ok(TsneResult {
        coords: Tensor::new([n, 2], y).expect("coordinate shape"),
        kl_history,
        entropies,
    })
}

/// Mean silhouette coefficient with Euclidean distance. Points in
/// singleton clusters score 0.
pub fn silhouette_score(points: &Tensor, labels: &[String]) -> f64 {
    let n = labels.len();
    assert_eq!(points.shape()[0], n, "one label per point");
    let dist = pairwise_sq_distances(points);
    let mut classes: Vec<&str> = labels.iter().map(String::as_str).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![(0.0, 0usize); classes.len()];
        for j in 0..n {
            if j != i {
                let c = classes.binary_search(&labels[j].as_str()).unwrap();
                sums[c].0 += dist[i * n + j].sqrt();
                sums[c].1 += 1;
            }
        }
        let own = classes.binary_search(&labels[i].as_str()).unwrap();
        if sums[own].1 == 0 {
            continue;
        }
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|&(c, s)| c != own && s.1 > 0)
            .map(|(_, s)| s.0 / s.1 as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}
