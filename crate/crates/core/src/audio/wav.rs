//! Mono RIFF/WAVE in 16-bit PCM or 32-bit IEEE float.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{SampleBuffer, SynthError};

pub const SUPPORTED_RATES: [u32; 4] = [44_100, 48_000, 96_000, 192_000];

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WavError {
    #[error("buffer is at {buffer} Hz but the format says {format} Hz")]
    RateMismatch { buffer: u32, format: u32 },
    #[error("unsupported sample rate {0} Hz (supported: 44100, 48000, 96000, 192000)")]
    UnsupportedRate(u32),
    #[error("unsupported channel count {0}; only mono is supported")]
    UnsupportedChannels(u16),
    #[error("unsupported encoding: format tag {tag}, {bits} bits per sample")]
    UnsupportedEncoding { tag: u16, bits: u16 },
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("data chunk declares {declared} bytes but only {available} are present")]
    Truncated { declared: usize, available: usize },
    #[error("decoded samples are invalid: {0}")]
    Samples(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Pcm16,
    #[default]
    Float32,
}

impl Encoding {
    fn bytes_per_sample(self) -> usize {
        match self {
            Encoding::Pcm16 => 2,
            Encoding::Float32 => 4,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Pcm16 => "pcm16",
            Encoding::Float32 => "float32",
        })
    }
}

impl FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pcm16" => Ok(Encoding::Pcm16),
            "float32" => Ok(Encoding::Float32),
            _ => Err(format!("unknown encoding `{s}` (expected pcm16 or float32)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WavFormat {
    sample_rate_hz: u32,
    encoding: Encoding,
}

impl WavFormat {
    pub fn new(sample_rate_hz: u32, encoding: Encoding) -> Result<Self, WavError> {
        if !SUPPORTED_RATES.contains(&sample_rate_hz) {
            return Err(WavError::UnsupportedRate(sample_rate_hz));
        }
        Ok(Self {
            sample_rate_hz,
            encoding,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    /// Size of the header that precedes the sample data.
    pub fn header_len(&self) -> usize {
        match self.encoding {
            // RIFF + fmt(16) + data
            Encoding::Pcm16 => 12 + 24 + 8,
            // RIFF + fmt(18) + fact + data
            Encoding::Float32 => 12 + 26 + 12 + 8,
        }
    }

    /// Complete header for a file holding `n_samples` samples.
    pub fn header(&self, n_samples: usize) -> Vec<u8> {
        let bps = self.encoding.bytes_per_sample();
        let data_len = (n_samples * bps) as u32;
        let riff_len = (self.header_len() - 8) as u32 + data_len;
        let mut h = Vec::with_capacity(self.header_len());
        h.extend_from_slice(b"RIFF");
        h.extend_from_slice(&riff_len.to_le_bytes());
        h.extend_from_slice(b"WAVE");
        h.extend_from_slice(b"fmt ");
        let (tag, fmt_len) = match self.encoding {
            Encoding::Pcm16 => (FORMAT_PCM, 16u32),
            Encoding::Float32 => (FORMAT_FLOAT, 18u32),
        };
        h.extend_from_slice(&fmt_len.to_le_bytes());
        h.extend_from_slice(&tag.to_le_bytes());
        h.extend_from_slice(&1u16.to_le_bytes());
        h.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        h.extend_from_slice(&(self.sample_rate_hz * bps as u32).to_le_bytes());
        h.extend_from_slice(&(bps as u16).to_le_bytes());
        h.extend_from_slice(&(8 * bps as u16).to_le_bytes());
        if self.encoding == Encoding::Float32 {
            h.extend_from_slice(&0u16.to_le_bytes());
            h.extend_from_slice(b"fact");
            h.extend_from_slice(&4u32.to_le_bytes());
            h.extend_from_slice(&(n_samples as u32).to_le_bytes());
        }
        h.extend_from_slice(b"data");
        h.extend_from_slice(&data_len.to_le_bytes());
        debug_assert_eq!(h.len(), self.header_len());
        h
    }

    /// Appends the encoded form of `samples` to `out`.
    pub fn encode_samples(&self, samples: &[f64], out: &mut Vec<u8>) {
        out.reserve(samples.len() * self.encoding.bytes_per_sample());
        match self.encoding {
            Encoding::Pcm16 => {
                for &v in samples {
                    // f64::round is half away from zero
                    out.extend_from_slice(&((v * 32767.0).round() as i16).to_le_bytes());
                }
            }
            Encoding::Float32 => {
                for &v in samples {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
}

pub fn encode_wav(buffer: &SampleBuffer, format: &WavFormat) -> Result<Vec<u8>, WavError> {
    if buffer.sample_rate_hz() != format.sample_rate_hz {
        return Err(WavError::RateMismatch {
            buffer: buffer.sample_rate_hz(),
            format: format.sample_rate_hz,
        });
    }
    let mut bytes = format.header(buffer.len());
    format.encode_samples(buffer.samples(), &mut bytes);
    Ok(bytes)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a mono WAV file. PCM16 maps back through `/ 32767`, with -32768
/// pinned to -1.
pub fn decode_wav(bytes: &[u8]) -> Result<(SampleBuffer, WavFormat), WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::Malformed("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if len < 16 || body + len > bytes.len() {
                    return Err(WavError::Malformed(format!("fmt chunk of {len} bytes")));
                }
                let mut tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if tag == FORMAT_EXTENSIBLE {
                    if len < 40 {
                        return Err(WavError::Malformed("short extensible fmt chunk".into()));
                    }
                    tag = u16_at(bytes, body + 24);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    fmt.ok_or_else(|| WavError::Malformed("data chunk before fmt chunk".into()))?;
                if channels != 1 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                let encoding = match (tag, bits) {
                    (FORMAT_PCM, 16) => Encoding::Pcm16,
                    (FORMAT_FLOAT, 32) => Encoding::Float32,
                    _ => return Err(WavError::UnsupportedEncoding { tag, bits }),
                };
                let format = WavFormat::new(rate, encoding)?;
                let available = bytes.len() - body;
                if len > available {
                    return Err(WavError::Truncated {
                        declared: len,
                        available,
                    });
                }
                let data = &bytes[body..body + len];
                let samples: Vec<f64> = match encoding {
                    Encoding::Pcm16 => data
                        .chunks_exact(2)
                        .map(|c| (f64::from(i16::from_le_bytes([c[0], c[1]])) / 32767.0).max(-1.0))
                        .collect(),
                    Encoding::Float32 => data
                        .chunks_exact(4)
                        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                        .collect(),
                };
                return Ok((SampleBuffer::new(rate, samples)?, format));
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(WavError::Malformed(if fmt.is_some() {
        "no data chunk".into()
    } else {
        "no fmt chunk".into()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(samples: Vec<f64>) -> SampleBuffer {
        SampleBuffer::new(48_000, samples).unwrap()
    }

    fn fmt(encoding: Encoding) -> WavFormat {
        WavFormat::new(48_000, encoding).unwrap()
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let b = buf(vec![0.0, 1.0, -1.0, 0.5, -0.25, 0.1f32 as f64]);
        let bytes = encode_wav(&b, &fmt(Encoding::Float32)).unwrap();
        let (back, format) = decode_wav(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(format.encoding(), Encoding::Float32);
    }

    #[test]
    fn pcm16_full_scale_is_32767() {
        let b = buf(vec![1.0, -1.0, 0.5, 0.0]);
        let bytes = encode_wav(&b, &fmt(Encoding::Pcm16)).unwrap();
        let data = &bytes[44..];
        assert_eq!(i16::from_le_bytes([data[0], data[1]]), 32767);
        assert_eq!(i16::from_le_bytes([data[2], data[3]]), -32767);
        // 16383.5 rounds away from zero
        assert_eq!(i16::from_le_bytes([data[4], data[5]]), 16384);
        let (back, _) = decode_wav(&bytes).unwrap();
        for (x, y) in b.samples().iter().zip(back.samples()) {
            assert!((x - y).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn pcm16_minimum_decodes_to_minus_one() {
        let mut bytes = encode_wav(&buf(vec![0.0]), &fmt(Encoding::Pcm16)).unwrap();
        bytes[44..46].copy_from_slice(&i16::MIN.to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().0.samples(), &[-1.0]);
    }

    #[test]
    fn empty_buffer_is_header_only() {
        for encoding in [Encoding::Pcm16, Encoding::Float32] {
            let format = fmt(encoding);
            let bytes = encode_wav(&buf(vec![]), &format).unwrap();
            assert_eq!(bytes.len(), format.header_len());
            let data_len = u32_at(&bytes, bytes.len() - 4);
            assert_eq!(data_len, 0);
            assert!(decode_wav(&bytes).unwrap().0.is_empty());
        }
    }

    #[test]
    fn rate_mismatch() {
        let b = SampleBuffer::new(96_000, vec![0.0]).unwrap();
        assert!(matches!(
            encode_wav(&b, &fmt(Encoding::Float32)),
            Err(WavError::RateMismatch { .. })
        ));
        assert!(WavFormat::new(22_050, Encoding::Pcm16).is_err());
    }

    #[test]
    fn stereo_is_unsupported() {
        let mut bytes = encode_wav(&buf(vec![0.0, 0.0]), &fmt(Encoding::Pcm16)).unwrap();
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap_err(), WavError::UnsupportedChannels(2));
    }

    #[test]
    fn truncated_data_is_reported() {
        let bytes = encode_wav(&buf(vec![0.25; 100]), &fmt(Encoding::Float32)).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert_eq!(
            decode_wav(cut).unwrap_err(),
            WavError::Truncated {
                declared: 400,
                available: 390
            }
        );
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(decode_wav(b"not a wav"), Err(WavError::Malformed(_))));
        assert!(matches!(decode_wav(b"RIFF\0\0\0\0WAVE"), Err(WavError::Malformed(_))));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let bytes = encode_wav(&buf(vec![0.5, -0.5]), &fmt(Encoding::Pcm16)).unwrap();
        let mut with_list = bytes[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&bytes[36..]);
        let (back, _) = decode_wav(&with_list).unwrap();
        assert_eq!(back.len(), 2);
    }
}
