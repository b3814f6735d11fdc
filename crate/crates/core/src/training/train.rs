use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step_model, AdamConfig, AdamState};
use super::metrics::{argmax, EvalReport, MetricsAccumulator};
use super::{TrainConfig, TrainError};
use crate::audio::{segment_len, BatchIterator, ClipCache, CropMode, ManifestEntry, Vocabulary};
use crate::features::{MfccConfig, MfccExtractor};
use crate::model::{forward, Checkpoint, Frontend, ModelConfig, ModelParams};
use crate::tensor::{NormMode, Tape, Tensor};

/// Batch size used for evaluation and embedding extraction.
pub const EVAL_BATCH: usize = 16;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent<'a> {
    Batch {
        epoch: usize,
        index: usize,
        size: usize,
        loss: f64,
    },
    Epoch {
        metrics: &'a EpochMetrics,
        seconds: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestCheckpoint {
    pub checkpoint: Checkpoint,
    pub epoch: usize,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    /// Highest eval macro-F1 seen (earliest epoch on ties); needs an eval set.
    pub best: Option<BestCheckpoint>,
    pub history: Vec<EpochMetrics>,
    /// Training files skipped because they could not be read, over all epochs.
    pub skipped: usize,
}

/// Turns raw `[B, 1, L]` segments into the model's input for its front end.
pub fn model_input(raw: &Tensor, extractor: Option<&MfccExtractor>) -> Result<Tensor, TrainError> {
    match extractor {
        None => Ok(raw.clone()),
        Some(ex) => Ok(ex.batch_features(raw)?),
    }
}

fn extractor_for(model: &ModelConfig, mfcc: Option<&MfccConfig>) -> Result<Option<MfccExtractor>, TrainError> {
    match (model.frontend, mfcc) {
        (Frontend::Raw, _) => Ok(None),
        (Frontend::Mfcc, Some(m)) => Ok(Some(MfccExtractor::new(m)?)),
        (Frontend::Mfcc, None) => Err(TrainError::Config(vec!["MFCC front end selected without MFCC settings".into()])),
    }
}

/// Scores `params` on one centre crop per file.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_params(
    params: &ModelParams,
    labels: &Vocabulary,
    extractor: Option<&MfccExtractor>,
    entries: &[ManifestEntry],
    segment_seconds: f64,
    batch_size: usize,
    cache: Option<&mut ClipCache>,
) -> Result<EvalReport, TrainError> {
    let mut local = ClipCache::new();
    let cache = cache.unwrap_or(&mut local);
    let mut it = BatchIterator::new(
        entries,
        labels,
        batch_size,
        segment_len(segment_seconds),
        0,
        0,
        false,
        CropMode::Center,
    )?
    .with_cache(cache);
    let mut acc = MetricsAccumulator::new(labels.labels());
    for batch in &mut it {
        let input = model_input(&batch.data, extractor)?;
        let out = params.infer(&input)?;
        for (b, &truth) in batch.labels.iter().enumerate() {
            acc.add(truth, argmax(out.logits.row(b)));
        }
    }
    acc.add_skipped(it.skipped() as u64);
    Ok(acc.finish())
}

/// Evaluates a checkpoint; every manifest label must be in its vocabulary.
pub fn evaluate(checkpoint: &Checkpoint, entries: &[ManifestEntry], batch_size: usize) -> Result<EvalReport, TrainError> {
    checkpoint.labels.check_covers(entries)?;
    let extractor = extractor_for(checkpoint.params.config(), checkpoint.mfcc.as_ref())?;
    evaluate_params(
        &checkpoint.params,
        &checkpoint.labels,
        extractor.as_ref(),
        entries,
        checkpoint.segment_seconds,
        batch_size,
        None,
    )
}

struct StepResult {
    loss: f64,
    correct: usize,
}

fn train_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    adam: &AdamConfig,
    input: Tensor,
    labels: &[usize],
) -> Result<StepResult, TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let mut stats = params.stats().clone();
    let x = tape.constant(input);
    let out = forward(&mut tape, params.config(), &bound, &mut stats, x, NormMode::Train)?;
    let loss_var = tape.cross_entropy(out.logits, labels).map_err(crate::model::ModelError::from)?;
    let loss = tape.value(loss_var).item().expect("scalar loss");
    let logits = tape.value(out.logits);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(b, &l)| argmax(logits.row(b)) == l)
        .count();
    if !loss.is_finite() {
        return Ok(StepResult { loss, correct });
    }
    tape.backward(loss_var).map_err(crate::model::ModelError::from)?;
    let grads: Vec<Tensor> = bound.vars().map(|(_, v)| tape.grad_tensor(v)).collect();
    adam_step_model(params, &grads, state, adam)?;
    params.commit_stats(stats);
    Ok(StepResult { loss, correct })
}

/// Trains a fresh model. The number of classes is taken from the training
/// manifest's label set.
pub fn train(
    train_entries: &[ManifestEntry],
    eval_entries: Option<&[ManifestEntry]>,
    model: &ModelConfig,
    mfcc: &MfccConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent),
) -> Result<TrainOutcome, TrainError> {
    let mut errs = cfg.validate();
    errs.extend(model.validate().into_iter().filter(|e| !e.contains("num_classes")));
    if model.frontend == Frontend::Mfcc {
        errs.extend(mfcc.validate());
    }
    if !errs.is_empty() {
        return Err(TrainError::Config(errs));
    }
    if train_entries.is_empty() {
        return Err(TrainError::Config(vec!["training manifest is empty".into()]));
    }
    let labels = Vocabulary::from_entries(train_entries);
    if labels.len() < 2 {
        return Err(TrainError::Config(vec![format!(
            "training needs at least 2 classes, manifest has {}",
            labels.len()
        )]));
    }
    if let Some(eval) = eval_entries {
        labels.check_covers(eval)?;
    }
    let mut model = model.clone();
    if model.num_classes != labels.len() {
        log::info!("using {} classes from the training manifest", labels.len());
        model.num_classes = labels.len();
    }
    let extractor = extractor_for(&model, Some(mfcc))?;
    let input_channels = extractor.as_ref().map_or(1, |e| e.config().feature_dim());
    let segment = segment_len(cfg.segment_seconds);
    let steps = match &extractor {
        Some(e) => e.config().frame_count(segment),
        None => Some(segment),
    };
    if steps.and_then(|l| model.shape_plan(l)).is_none() {
        return Err(TrainError::Config(vec![format!(
            "a {} s segment collapses to zero encoder frames",
            cfg.segment_seconds
        )]));
    }

    let mut params = ModelParams::init(&model, input_channels, cfg.seed)?;
    let mut state = AdamState::for_params(&params);
    let adam = cfg.adam();
    let snapshot = |params: &ModelParams, epoch: usize| Checkpoint {
        params: params.clone(),
        labels: labels.clone(),
        mfcc: extractor.as_ref().map(|e| e.config().clone()),
        seed: cfg.seed,
        segment_seconds: cfg.segment_seconds,
        epoch,
    };

    let mut train_cache = ClipCache::new();
    let mut eval_cache = ClipCache::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestCheckpoint> = None;
    let mut skipped = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut it = BatchIterator::new(
            train_entries,
            &labels,
            cfg.batch_size,
            segment,
            cfg.seed,
            epoch as u64,
            true,
            CropMode::Random,
        )?
        .with_cache(&mut train_cache);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (index, batch) in (&mut it).enumerate() {
            let input = model_input(&batch.data, extractor.as_ref())?;
            let r = train_step(&mut params, &mut state, &adam, input, &batch.labels)?;
            if !r.loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: index,
                    loss: r.loss,
                });
            }
            let size = batch.labels.len();
            observer(TrainEvent::Batch {
                epoch,
                index,
                size,
                loss: r.loss,
            });
            loss_sum += r.loss * size as f64;
            correct += r.correct;
            seen += size;
        }
        if it.skipped() > 0 {
            log::warn!("epoch {epoch}: skipped {} unreadable training files", it.skipped());
        }
        skipped += it.skipped();
        if seen == 0 {
            return Err(TrainError::Data("no readable training files".into()));
        }
        let eval_macro_f1 = match eval_entries {
            Some(eval) => {
                let r = evaluate_params(
                    &params,
                    &labels,
                    extractor.as_ref(),
                    eval,
                    cfg.segment_seconds,
                    EVAL_BATCH,
                    Some(&mut eval_cache),
                )?;
                if best.as_ref().is_none_or(|b| r.macro_f1 > b.macro_f1) {
                    best = Some(BestCheckpoint {
                        checkpoint: snapshot(&params, epoch),
                        epoch,
                        macro_f1: r.macro_f1,
                    });
                }
                Some(r.macro_f1)
            }
            None => None,
        };
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            eval_macro_f1,
        };
        observer(TrainEvent::Epoch {
            metrics: &metrics,
            seconds: started.elapsed().as_secs_f64(),
        });
        history.push(metrics);
    }
    Ok(TrainOutcome {
        final_checkpoint: snapshot(&params, cfg.epochs),
        best,
        history,
        skipped,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// [`train`] writing its artefacts into `out_dir`:
///
/// * `metrics.jsonl`: one [`EpochMetrics`] object per epoch (deterministic)
/// * `timing.jsonl`: `{"epoch", "seconds"}` wall-clock time per epoch
/// * `final.ckpt`, and `best.ckpt` when an eval manifest is given
pub fn train_to_dir(
    out_dir: &Path,
    train_entries: &[ManifestEntry],
    eval_entries: Option<&[ManifestEntry]>,
    model: &ModelConfig,
    mfcc: &MfccConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let timing_path = out_dir.join("timing.jsonl");
    let mut metrics = File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut timing = File::create(&timing_path).map_err(io_err(&timing_path))?;
    let mut write_err = None;
    let mut observer = |ev: TrainEvent| {
        if let TrainEvent::Epoch { metrics: m, seconds } = ev {
            log::info!(
                "epoch {} loss {:.4} train_acc {:.4}{} ({seconds:.1}s)",
                m.epoch,
                m.loss,
                m.train_acc,
                m.eval_macro_f1.map(|f| format!(" eval_macro_f1 {f:.4}")).unwrap_or_default()
            );
            let line = serde_json::to_string(m).expect("metrics serialise");
            let t = serde_json::json!({ "epoch": m.epoch, "seconds": seconds });
            let r = writeln!(metrics, "{line}")
                .and_then(|_| metrics.flush())
                .map_err(io_err(&metrics_path))
                .and_then(|_| writeln!(timing, "{t}").map_err(io_err(&timing_path)));
            if let Err(e) = r {
                write_err.get_or_insert(e);
            }
        }
    };
    let outcome = train(train_entries, eval_entries, model, mfcc, cfg, &mut observer)?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let final_path = out_dir.join("final.ckpt");
    outcome.final_checkpoint.save(&final_path)?;
    if let Some(b) = &outcome.best {
        b.checkpoint.save(out_dir.join("best.ckpt"))?;
    }
    Ok(outcome)
}
