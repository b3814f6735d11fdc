use std::path::Path;

use thiserror::Error;

use super::SAMPLE_RATE;

/// Mono 16 kHz PCM audio scaled to `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_path: String,
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a RIFF/WAVE file: {0}")]
    NotWave(String),
    #[error("unsupported WAV format tag {0:#06x} (only 16-bit PCM is accepted)")]
    UnsupportedFormat(u16),
    #[error("unsupported bit depth {0} (only 16-bit PCM is accepted)")]
    UnsupportedBitDepth(u16),
    #[error("unsupported channel count {0} (only mono is accepted)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample rate {0} Hz (only 16000 Hz is accepted; no resampling)")]
    UnsupportedSampleRate(u32),
    #[error("truncated {0} chunk")]
    Truncated(String),
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
    #[error("WAV file contains no samples")]
    Empty,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a complete WAV byte stream. `source_path` is only recorded.
pub fn decode_wav(bytes: &[u8], source_path: &str) -> Result<WaveClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWave("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        if size > bytes.len() - body_start {
            return Err(AudioError::Truncated(name));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Truncated(name));
                }
                format = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => {
                data = Some(body);
                break;
            }
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    if pos < bytes.len() && pos + 8 > bytes.len() && data.is_none() {
        return Err(AudioError::Truncated("chunk header".into()));
    }
    let (tag, channels, rate, bits) = format.ok_or(AudioError::MissingChunk("fmt "))?;
    if tag != 1 {
        return Err(AudioError::UnsupportedFormat(tag));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedBitDepth(bits));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedChannels(channels));
    }
    if rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedSampleRate(rate));
    }
    let data = data.ok_or(AudioError::MissingChunk("data"))?;
    if data.len() % 2 != 0 {
        return Err(AudioError::Truncated("data".into()));
    }
    if data.is_empty() {
        return Err(AudioError::Empty);
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
        .collect();
    Ok(WaveClip {
        samples,
        sample_rate: rate,
        source_path: source_path.to_string(),
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveClip, AudioError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: display.clone(),
        source,
    })?;
    decode_wav(&bytes, &display)
}

/// Quantises to 16-bit PCM (rounding, clamped) and encodes a canonical
/// 44-byte-header mono WAV at `sample_rate`.
pub fn encode_wav<S: Into<f64> + Copy>(samples: &[S], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.into() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &WaveClip) -> Result<(), AudioError> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(&clip.samples, clip.sample_rate)).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}
