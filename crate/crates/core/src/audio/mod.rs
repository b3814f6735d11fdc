//! WAV ingestion, dataset manifests and fixed-length segment sampling.

mod batch;
mod crop;
mod manifest;
mod wav;

pub use batch::{BatchIterator, ClipCache, CropMode, SegmentBatch};
pub use crop::{center_crop, random_crop, segment_len};
pub use manifest::{load_manifest, parse_manifest, ManifestEntry, ManifestError, Vocabulary, VocabularyError};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, AudioError, WaveClip};

/// The only supported sample rate.
pub const SAMPLE_RATE: u32 = 16_000;
