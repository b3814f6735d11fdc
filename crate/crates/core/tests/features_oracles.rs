use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawlid::features::{add_deltas, decode_feature_dump, encode_feature_dump, MfccConfig, MfccExtractor};
use rawlid::tensor::Tensor;

fn naive_power(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &x) in frame.iter().enumerate() {
                let phase = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += x * phase.cos();
                im -= x * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn extractor() -> MfccExtractor {
    MfccExtractor::new(&MfccConfig::default()).unwrap()
}

#[test]
fn power_spectrum_matches_naive_dft() {
    let ex = extractor();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let frame: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = ex.power_spectrum(&frame);
        let slow = naive_power(&frame, 512);
        assert_eq!(fast.len(), 257);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }
}

#[test]
fn sine_energy_peaks_at_nearest_filter() {
    let ex = extractor();
    let frame: Vec<f64> = (0..400).map(|i| (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin()).collect();
    let energies = ex.mel_energies(&naive_power(&frame, 512));
    let argmax = (0..energies.len()).max_by(|&a, &b| energies[a].total_cmp(&energies[b])).unwrap();
    let centers = ex.filter_centers_hz();
    let nearest = (0..centers.len())
        .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
        .unwrap();
    assert_eq!(argmax, nearest);
    assert_eq!(ex.mel_energies(&ex.power_spectrum(&frame)).len(), 26);
}

#[test]
fn four_seconds_gives_398_by_39() {
    let x: Vec<f64> = (0..64_000).map(|i| (i as f64 * 0.01).sin() * 0.3).collect();
    let f = extractor().extract(&x).unwrap();
    assert_eq!(f.shape(), &[398, 39]);
    assert!(f.is_finite());
}

#[test]
fn deltas_match_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t_len, d) = (11, 13);
    let s = Tensor::from_fn([t_len, d], |_| rng.random_range(-5.0..5.0));
    let got = add_deltas(&s, 2);
    let c = |x: &dyn Fn(isize, usize) -> f64, t: isize, j: usize| -> f64 {
        let num = 1.0 * (x(t + 1, j) - x(t - 1, j)) + 2.0 * (x(t + 2, j) - x(t - 2, j));
        num / 10.0
    };
    let clamp = |t: isize| t.clamp(0, t_len as isize - 1) as usize;
    let stat = |t: isize, j: usize| s.data()[clamp(t) * d + j];
    let delta: Vec<f64> = (0..t_len * d).map(|i| c(&stat, (i / d) as isize, i % d)).collect();
    let dl = |t: isize, j: usize| delta[clamp(t) * d + j];
    for t in 0..t_len {
        for j in 0..d {
            assert_eq!(got.row(t)[j], s.data()[t * d + j]);
            assert_eq!(got.row(t)[d + j], delta[t * d + j]);
            assert_eq!(got.row(t)[2 * d + j], c(&dl, t as isize, j));
        }
    }
}

#[test]
fn circular_shift_by_one_period() {
    // period of 160 samples equals the frame shift
    let period = 160;
    let x: Vec<f64> = (0..16_000)
        .map(|i| {
            let p = 2.0 * PI * (i % period) as f64 / period as f64;
            0.4 * p.sin() + 0.2 * (3.0 * p).cos() + 0.1 * (7.0 * p).sin()
        })
        .collect();
    let mut rolled = x.clone();
    rolled.rotate_left(period);
    let ex = extractor();
    let (a, b) = (ex.static_mfcc(&x).unwrap(), ex.static_mfcc(&rolled).unwrap());
    let frames = a.shape()[0];
    for t in 1..frames - 1 {
        for (p, q) in b.row(t).iter().zip(a.row(t + 1)) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

#[test]
fn scaling_moves_only_c0() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let alpha: f64 = 0.25;
    let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
    let ex = extractor();
    let (a, b) = (ex.static_mfcc(&x).unwrap(), ex.static_mfcc(&scaled).unwrap());
    let shift = 2.0 * alpha.ln() * 26f64.sqrt();
    for t in 0..a.shape()[0] {
        assert!((b.row(t)[0] - a.row(t)[0] - shift).abs() < 1e-6);
        for k in 1..13 {
            assert!((b.row(t)[k] - a.row(t)[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn feature_dump_round_trip_is_f32_exact() {
    let f = Tensor::from_fn([5, 39], |i| f64::from(i as f32 * 0.125 - 3.0));
    assert_eq!(decode_feature_dump(&encode_feature_dump(&f)).unwrap(), f);
}
