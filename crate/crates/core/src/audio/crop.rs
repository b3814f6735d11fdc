use rand::Rng;

use super::SAMPLE_RATE;

/// Number of samples in a segment of `seconds`.
pub fn segment_len(seconds: f64) -> usize {
    (seconds * f64::from(SAMPLE_RATE)).round() as usize
}

fn cyclic(samples: &[f32], offset: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| f64::from(samples[(offset + i) % samples.len()])).collect()
}

/// Uniformly placed window of `len` samples, returned with its offset.
///
/// Clips shorter than the window are repeated cyclically from the start.
/// Panics on an empty clip.
pub fn random_crop<R: Rng + ?Sized>(samples: &[f32], len: usize, rng: &mut R) -> (Vec<f64>, usize) {
    assert!(!samples.is_empty(), "cannot crop an empty clip");
    if samples.len() < len {
        return (cyclic(samples, 0, len), 0);
    }
    let offset = rng.random_range(0..=samples.len() - len);
    (cyclic(samples, offset, len), offset)
}

/// Centred window of `len` samples, with the same short-clip rule as
/// [`random_crop`].
pub fn center_crop(samples: &[f32], len: usize) -> (Vec<f64>, usize) {
    assert!(!samples.is_empty(), "cannot crop an empty clip");
    if samples.len() < len {
        return (cyclic(samples, 0, len), 0);
    }
    let offset = (samples.len() - len) / 2;
    (cyclic(samples, offset, len), offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> Vec<f32> {
        (0..n).map(|i| (i % 30000) as f32 / 32768.0).collect()
    }

    #[test]
    fn four_seconds_is_64000_contiguous_samples() {
        let clip = ramp(160_000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w, off) = random_crop(&clip, segment_len(4.0), &mut rng);
        assert_eq!(w.len(), 64_000);
        for (i, v) in w.iter().enumerate() {
            assert_eq!(*v, f64::from(clip[off + i]));
        }
    }

    #[test]
    fn exact_length_clip_is_returned_whole() {
        let clip = ramp(64_000);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, off) = random_crop(&clip, 64_000, &mut rng);
        assert_eq!(off, 0);
        assert_eq!(w.len(), clip.len());
    }

    #[test]
    fn short_clip_repeats_cyclically() {
        let clip = ramp(16_000);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, _) = random_crop(&clip, segment_len(2.0), &mut rng);
        assert_eq!(w.len(), 32_000);
        assert_eq!(w[16_000], f64::from(clip[0]));
        assert_eq!(w[31_999], f64::from(clip[15_999]));
    }

    #[test]
    fn center_crop_offset() {
        let clip = ramp(10);
        assert_eq!(center_crop(&clip, 4).1, 3);
    }
}
