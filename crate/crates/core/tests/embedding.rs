use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rawlid::embedding::{
    conditional_probabilities, pairwise_sq_distances, silhouette_score, tsne_2d, EmbeddingError, TsneConfig,
};
use rawlid::tensor::Tensor;

fn blobs(per: usize, dim: usize, gap: f64, seed: u64) -> (Tensor, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..per {
            for k in 0..dim {
                let centre = if k == 0 { c as f64 * gap } else { 0.0 };
                data.push(centre + normal.sample(&mut rng));
            }
            labels.push(format!("c{c}"));
        }
    }
    (Tensor::new([2 * per, dim], data).unwrap(), labels)
}

/// Logistic regression by plain gradient descent on standardised inputs;
/// returns training accuracy.
fn linear_probe_accuracy(points: &Tensor, labels: &[String]) -> f64 {
    let n = labels.len();
    let d = points.shape()[1];
    let mean: Vec<f64> = (0..d).map(|k| (0..n).map(|i| points.row(i)[k]).sum::<f64>() / n as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|k| ((0..n).map(|i| (points.row(i)[k] - mean[k]).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12))
        .collect();
    let x: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|k| (points.row(i)[k] - mean[k]) / sd[k]).collect()).collect();
    let y: Vec<f64> = labels.iter().map(|l| if l == &labels[0] { 0.0 } else { 1.0 }).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..3000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let z: f64 = b + (0..d).map(|k| w[k] * x[i][k]).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y[i];
            (0..d).for_each(|k| gw[k] += err * x[i][k]);
            gb += err;
        }
        (0..d).for_each(|k| w[k] -= 0.5 * gw[k] / n as f64);
        b -= 0.5 * gb / n as f64;
    }
    let correct = (0..n)
        .filter(|&i| {
            let z: f64 = b + (0..d).map(|k| w[k] * x[i][k]).sum::<f64>();
            (z > 0.0) == (y[i] > 0.5)
        })
        .count();
    correct as f64 / n as f64
}

fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

#[test]
fn bandwidth_search_hits_target_entropy() {
    for (seed, perplexity) in [(0, 5.0), (1, 30.0), (2, 50.0)] {
        let (x, _) = blobs(100, 6, 3.0, seed);
        let n = 200;
        let (p, reported) = conditional_probabilities(&pairwise_sq_distances(&x), n, perplexity);
        for i in 0..n {
            let row = &p[i * n..(i + 1) * n];
            assert_eq!(row[i], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = entropy_bits(row);
            assert!((h - perplexity.log2()).abs() < 1e-4, "row {i}: {h}");
            assert!((h - reported[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn two_blobs_separate_in_two_dimensions() {
    let (x, labels) = blobs(100, 10, 6.0, 7);
    let out = tsne_2d(&x, &TsneConfig::default()).unwrap();
    assert_eq!(out.coords.shape(), &[200, 2]);
    for c in 0..2 {
        let mean: f64 = (0..200).map(|i| out.coords.row(i)[c]).sum::<f64>() / 200.0;
        assert!(mean.abs() < 1e-9);
    }
    assert!(linear_probe_accuracy(&out.coords, &labels) >= 0.99);
    assert!(silhouette_score(&out.coords, &labels) > 0.5);
    assert!(out.entropies.iter().all(|h| (h - 30f64.log2()).abs() < 1e-4));
}

#[test]
fn kl_settles_over_final_iterations() {
    let (x, _) = blobs(50, 5, 4.0, 3);
    let cfg = TsneConfig {
        perplexity: 10.0,
        ..TsneConfig::default()
    };
    let out = tsne_2d(&x, &cfg).unwrap();
    assert_eq!(out.kl_history.len(), 100);
    assert_eq!(out.kl_history[0].0, 900);
    let first = out.kl_history[0].1;
    let last = out.kl_history[99].1;
    assert!(last.is_finite() && last > 0.0);
    assert!(last <= first * (1.0 + 1e-6), "{first} -> {last}");
}

#[test]
fn tsne_is_deterministic_per_seed() {
    let (x, _) = blobs(40, 4, 3.0, 11);
    let cfg = TsneConfig {
        perplexity: 8.0,
        iterations: 300,
        ..TsneConfig::default()
    };
    let a = tsne_2d(&x, &cfg).unwrap();
    assert_eq!(a, tsne_2d(&x, &cfg).unwrap());
    let b = tsne_2d(&x, &TsneConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.coords, b.coords);
}

#[test]
fn rejects_degenerate_inputs() {
    let cfg = TsneConfig {
        perplexity: 5.0,
        ..TsneConfig::default()
    };
    let mut x = Tensor::from_fn([20, 3], |i| i as f64);
    x.data_mut()[4] = f64::NAN;
    assert_eq!(tsne_2d(&x, &cfg), Err(EmbeddingError::NonFinite));
    let ok = Tensor::from_fn([15, 3], |i| i as f64);
    assert!(matches!(tsne_2d(&ok, &cfg), Err(EmbeddingError::TooFewPoints { .. })));
    let big = Tensor::zeros([10_001, 1]);
    assert_eq!(tsne_2d(&big, &cfg), Err(EmbeddingError::TooManyPoints(10_001)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn silhouette_bounded_and_label_name_invariant(
        vals in proptest::collection::vec(-10.0f64..10.0, 16),
        assign in proptest::collection::vec(0usize..3, 8),
    ) {
        let x = Tensor::new([8, 2], vals).unwrap();
        let a: Vec<String> = assign.iter().map(|c| format!("k{c}")).collect();
        let b: Vec<String> = assign.iter().map(|c| format!("z{}", 2 - c)).collect();
        let s = silhouette_score(&x, &a);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - silhouette_score(&x, &b)).abs() < 1e-12);
    }
}
