use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::crop::{center_crop, random_crop};
use super::manifest::{ManifestEntry, Vocabulary, VocabularyError};
use super::wav::{read_wav, AudioError, WaveClip};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// Fixed-length raw segments `[B, 1, L]` with class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBatch {
    pub data: Tensor,
    pub labels: Vec<usize>,
    pub paths: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Uniform random window per file, reseeded per (epoch, file).
    Random,
    /// Deterministic centred window.
    Center,
}

/// Decoded clips kept in memory across epochs.
#[derive(Default)]
pub struct ClipCache {
    clips: HashMap<String, Arc<WaveClip>>,
}

impl ClipCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, path: &str) -> Result<Arc<WaveClip>, AudioError> {
        if let Some(c) = self.clips.get(path) {
            return Ok(c.clone());
        }
        let clip = Arc::new(read_wav(path)?);
        self.clips.insert(path.to_string(), clip.clone());
        Ok(clip)
    }
}

/// One epoch of batches: one crop per readable file, final partial batch
/// kept. Unreadable files are skipped with a warning and counted.
pub struct BatchIterator<'a> {
    entries: &'a [ManifestEntry],
    vocab: &'a Vocabulary,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    segment: usize,
    seed: u64,
    epoch: u64,
    mode: CropMode,
    cache: Option<&'a mut ClipCache>,
    skipped: usize,
    reported: bool,
}

impl<'a> BatchIterator<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        entries: &'a [ManifestEntry],
        vocab: &'a Vocabulary,
        batch_size: usize,
        segment: usize,
        seed: u64,
        epoch: u64,
        shuffle: bool,
        mode: CropMode,
    ) -> Result<Self, VocabularyError> {
        assert!(batch_size >= 1, "batch size must be positive");
        assert!(segment >= 1, "segment length must be positive");
        vocab.check_covers(entries)?;
        let mut order: Vec<usize> = (0..entries.len()).collect();
        if shuffle {
            order.shuffle(&mut stream_rng(seed, "data", &[epoch]));
        }
        Ok(BatchIterator {
            entries,
            vocab,
            order,
            pos: 0,
            batch_size,
            segment,
            seed,
            epoch,
            mode,
            cache: None,
            skipped: 0,
            reported: false,
        })
    }

    /// Serve clips from (and fill) `cache` instead of re-reading files.
    pub fn with_cache(mut self, cache: &'a mut ClipCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Files skipped so far because they could not be read.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn load(&mut self, path: &str) -> Result<Arc<WaveClip>, AudioError> {
        match self.cache.as_deref_mut() {
            Some(c) => c.get(path),
            None => read_wav(path).map(Arc::new),
        }
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = SegmentBatch;

    fn next(&mut self) -> Option<SegmentBatch> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut paths = Vec::new();
        while labels.len() < self.batch_size && self.pos < self.order.len() {
            let idx = self.order[self.pos];
            self.pos += 1;
            let entry = &self.entries[idx];
            let clip = match self.load(&entry.path) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("skipping {}: {e}", entry.path);
                    self.skipped += 1;
                    continue;
                }
            };
            let (window, _) = match self.mode {
                CropMode::Random => {
                    let mut rng = stream_rng(self.seed, "crops", &[self.epoch, idx as u64]);
                    random_crop(&clip.samples, self.segment, &mut rng)
                }
                CropMode::Center => center_crop(&clip.samples, self.segment),
            };
            data.extend(window);
            labels.push(self.vocab.index_of(&entry.label).expect("vocabulary checked"));
            paths.push(entry.path.clone());
        }
        if labels.is_empty() {
            if self.skipped > 0 && !self.reported {
                log::warn!("epoch {}: skipped {} unreadable files", self.epoch, self.skipped);
                self.reported = true;
            }
            return None;
        }
        let data = Tensor::new([labels.len(), 1, self.segment], data).expect("batch shape");
        Some(SegmentBatch { data, labels, paths })
    }
}
