use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rawlid::audio::{load_manifest, ManifestEntry};
use rawlid::features::MfccConfig;
use rawlid::model::{Checkpoint, Frontend, ModelConfig, Variant};
use rawlid::synthdata::{generate_dataset, SynthSpec};
use rawlid::tensor::Tensor;
use rawlid::training::{
    adam_step, evaluate, train, train_to_dir, AdamConfig, AdamState, EvalReport, MetricsAccumulator, TrainConfig,
    TrainError, TrainEvent,
};

fn tiny_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        initial_filters: 4,
        block_channels: [4, 8, 8],
        initial_conv_stride: 16,
        lstm_hidden: 8,
        num_heads: 2,
        head_dim: 4,
        projection_dim: 8,
        ..ModelConfig::default()
    }
}

fn dataset(dir: &Path, classes: usize, clips: usize) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let spec = SynthSpec {
        num_classes: classes,
        clips_per_class: clips,
        min_seconds: 1.0,
        max_seconds: 1.5,
        difficulty: 0.1,
        ..SynthSpec::default()
    };
    let s = generate_dataset(&spec, dir).unwrap();
    (load_manifest(s.train_manifest).unwrap(), load_manifest(s.eval_manifest).unwrap())
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        segment_seconds: 1.0,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_matches_reference_on_square() {
    let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
    let mut w_ref = 1.5f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    let mut params = vec![Tensor::new([1], vec![1.5]).unwrap()];
    let mut state = AdamState::new([1]);
    let cfg = AdamConfig {
        lr,
        beta1: b1,
        beta2: b2,
        eps,
    };
    for t in 1..=10 {
        let g = 2.0 * w_ref;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let step = lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        let before = w_ref;
        w_ref -= step;
        let grad = vec![Tensor::new([1], vec![2.0 * params[0].data()[0]]).unwrap()];
        adam_step(&mut params, &grad, &mut state, &cfg).unwrap();
        assert!((params[0].data()[0] - w_ref).abs() < 1e-12, "step {t}");
        if t == 1 {
            assert!(((before - w_ref) - lr).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn streaming_metrics_match_confusion_rebuild(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 0..60),
    ) {
        let labels: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let mut acc = MetricsAccumulator::new(&labels);
        let mut confusion = vec![vec![0u64; 4]; 4];
        for &(t, p) in &pairs {
            acc.add(t, p);
            confusion[t][p] += 1;
        }
        let streamed = acc.finish();
        let rebuilt = EvalReport::from_confusion(&labels, confusion, 0);
        prop_assert_eq!(&streamed, &rebuilt);
        prop_assert!((0.0..=1.0).contains(&streamed.macro_f1));
        let correct: u64 = (0..4).map(|c| streamed.confusion[c][c]).sum();
        let acc_want = if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 };
        prop_assert_eq!(streamed.accuracy, acc_want);
    }
}

#[test]
fn overfits_two_separable_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = dataset(dir.path(), 2, 5);
    assert_eq!(tr.len(), 8);
    let out = train(&tr, None, &tiny_model(Variant::ResnetLstmMha), &MfccConfig::default(), &quick(5), &mut |_| {}).unwrap();
    assert!(out.history.iter().any(|m| m.train_acc == 1.0), "{:?}", out.history);
    assert!(out.best.is_none());
}

#[test]
fn first_batch_loss_is_near_log_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = dataset(dir.path(), 8, 3);
    let batch: Vec<_> = tr.iter().step_by(2).cloned().collect();
    assert_eq!(batch.len(), 8);
    for variant in [Variant::Resnet, Variant::ResnetLstm, Variant::ResnetLstmMha] {
        for seed in 0..2 {
            let cfg = TrainConfig {
                seed,
                batch_size: 8,
                ..quick(1)
            };
            let model = ModelConfig {
                variant,
                ..ModelConfig::default()
            };
            let mut first = None;
            train(&batch, None, &model, &MfccConfig::default(), &cfg, &mut |e| {
                if let TrainEvent::Batch { loss, .. } = e {
                    first.get_or_insert(loss);
                }
            })
            .unwrap();
            let loss = first.unwrap();
            assert!((loss - 8f64.ln()).abs() < 0.1, "{variant:?} seed {seed}: {loss}");
        }
    }
}

#[test]
fn loss_falls_over_first_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = dataset(dir.path(), 2, 10);
    let out = train(&tr, None, &tiny_model(Variant::ResnetLstmMha), &MfccConfig::default(), &quick(3), &mut |_| {}).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|m| m.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn training_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, ev) = dataset(&dir.path().join("data"), 2, 6);
    let model = tiny_model(Variant::ResnetLstmMha);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|r| {
            let out = dir.path().join(r);
            train_to_dir(&out, &tr, Some(&ev), &model, &MfccConfig::default(), &quick(3)).unwrap();
            out
        })
        .collect();
    for f in ["metrics.jsonl", "final.ckpt", "best.ckpt"] {
        let a = fs::read(runs[0].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let lines = fs::read_to_string(runs[0].join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert!(lines.lines().all(|l| l.contains("\"eval_macro_f1\"")));
    assert_eq!(fs::read_to_string(runs[0].join("timing.jsonl")).unwrap().lines().count(), 3);

    let ck = Checkpoint::load(runs[0].join("final.ckpt")).unwrap();
    assert_eq!(ck.epoch, 3);
    assert_eq!(ck.labels.labels(), ["lang00", "lang01"]);
    let a = evaluate(&ck, &ev, 3).unwrap();
    assert_eq!(a, evaluate(&ck, &ev, 5).unwrap());
    assert_eq!(a.count, ev.len() as u64);
}

#[test]
fn mfcc_frontend_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, ev) = dataset(dir.path(), 2, 4);
    let model = ModelConfig {
        frontend: Frontend::Mfcc,
        initial_conv_stride: 1,
        ..tiny_model(Variant::ResnetLstmMha)
    };
    let out = train(&tr, Some(&ev), &model, &MfccConfig::default(), &quick(1), &mut |_| {}).unwrap();
    let ck = out.final_checkpoint;
    assert_eq!(ck.params.input_channels(), 39);
    assert!(ck.mfcc.is_some());
    let back = Checkpoint::decode(&ck.encode()).unwrap();
    assert_eq!(evaluate(&back, &ev, 2).unwrap(), evaluate(&ck, &ev, 2).unwrap());
}

#[test]
fn rejects_single_class_and_bad_settings() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, ev) = dataset(dir.path(), 2, 3);
    let one: Vec<_> = tr.iter().filter(|e| e.label == "lang00").cloned().collect();
    let model = tiny_model(Variant::Resnet);
    let mfcc = MfccConfig::default();
    assert!(matches!(train(&one, None, &model, &mfcc, &quick(1), &mut |_| {}), Err(TrainError::Config(_))));
    let bad = TrainConfig {
        lr: -1.0,
        batch_size: 0,
        ..quick(1)
    };
    match train(&tr, None, &model, &mfcc, &bad, &mut |_| {}) {
        Err(TrainError::Config(errs)) => assert_eq!(errs.len(), 2, "{errs:?}"),
        other => panic!("{other:?}"),
    }
    let mut foreign = ev.clone();
    foreign[0].label = "klingon".into();
    assert!(matches!(
        train(&tr, Some(&foreign), &model, &mfcc, &quick(1), &mut |_| {}),
        Err(TrainError::Vocabulary(_))
    ));
    let short = TrainConfig {
        segment_seconds: 0.01,
        ..quick(1)
    };
    let mfcc_model = ModelConfig {
        frontend: Frontend::Mfcc,
        ..model.clone()
    };
    assert!(matches!(train(&tr, None, &mfcc_model, &mfcc, &short, &mut |_| {}), Err(TrainError::Config(_))));
}

#[test]
fn divergent_learning_rate_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = dataset(dir.path(), 2, 3);
    let cfg = TrainConfig {
        lr: 1e300,
        ..quick(4)
    };
    match train(&tr, None, &tiny_model(Variant::Resnet), &MfccConfig::default(), &cfg, &mut |_| {}) {
        Err(TrainError::Divergence { loss, .. }) => assert!(!loss.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn unreadable_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let (mut tr, _) = dataset(dir.path(), 2, 3);
    fs::write(&tr[0].path, b"not a wav").unwrap();
    tr.push(ManifestEntry {
        path: dir.path().join("missing.wav").display().to_string(),
        label: "lang01".into(),
    });
    let out = train(&tr, None, &tiny_model(Variant::Resnet), &MfccConfig::default(), &quick(2), &mut |_| {}).unwrap();
    assert_eq!(out.skipped, 4);
}
