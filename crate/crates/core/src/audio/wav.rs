//! Minimal RIFF/WAVE PCM16 reader and canonical writer.

use std::fs;
use std::io::{self, ErrorKind};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{AudioBuffer, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("malformed RIFF/WAVE header: {0}")]
    MalformedHeader(String),
    #[error("unsupported codec: format tag {0} (only PCM = 1 is supported)")]
    UnsupportedCodec(u16),
    #[error("unsupported bit depth: {0} bits per sample (only 16 is supported)")]
    UnsupportedBitDepth(u16),
    #[error("unsupported channel count: {0} (mono or stereo only)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample rate: 0 Hz")]
    ZeroSampleRate,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

struct Format {
    channels: u16,
    sample_rate: u32,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses WAV bytes into a 16 kHz mono buffer.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing RIFF/WAVE magic".into()));
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                WavError::MalformedHeader(format!(
                    "chunk {:?} claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(WavError::MalformedHeader("fmt chunk shorter than 16 bytes".into()));
                }
                let tag = u16_at(body, 0);
                if tag != 1 {
                    return Err(WavError::UnsupportedCodec(tag));
                }
                let channels = u16_at(body, 2);
                let sample_rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if bits != 16 {
                    return Err(WavError::UnsupportedBitDepth(bits));
                }
                if channels != 1 && channels != 2 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                if sample_rate == 0 {
                    return Err(WavError::ZeroSampleRate);
                }
                format = Some(Format { channels, sample_rate });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let format = format.ok_or_else(|| WavError::MalformedHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::MalformedHeader("no data chunk".into()))?;

    let interleaved: Vec<i16> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    let mono: Vec<i16> = if format.channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| ((lr[0] as i32 + lr[1] as i32) / 2) as i16)
            .collect()
    };
    let samples = if format.sample_rate == SAMPLE_RATE {
        mono
    } else {
        resample_linear(&mono, format.sample_rate, SAMPLE_RATE)
    };
    Ok(AudioBuffer::new(samples))
}

/// Linear-interpolation resampler. Output length is `floor(n * to / from)`.
pub fn resample_linear(input: &[i16], from: u32, to: u32) -> Vec<i16> {
    if input.is_empty() {
        return Vec::new();
    }
    let out_len = (input.len() as u64 * to as u64 / from as u64) as usize;
    let step = from as f64 / to as f64;
    let last = input.len() - 1;
    (0..out_len)
        .map(|i| {
            let src = i as f64 * step;
            let lo = (src.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = src - lo as f64;
            let v = input[lo] as f64 * (1.0 - frac) + input[hi] as f64 * frac;
            v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect()
}

/// Canonical 44-byte-header encoding of a mono 16 kHz buffer.
pub fn encode_wav(buffer: &AudioBuffer) -> Vec<u8> {
    let data_len = buffer.samples().len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in buffer.samples() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => WavError::NotFound(path.to_path_buf()),
        _ => WavError::Io { path: path.to_path_buf(), source: e },
    })?;
    decode_wav(&bytes)
}

pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), WavError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(buffer)).map_err(|e| WavError::Io { path: path.to_path_buf(), source: e })
}
