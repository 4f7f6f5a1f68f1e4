use std::path::Path;

use crate::error::{ModelError, Result};

/// Interleaved PCM audio normalized to [-1, 1].
#[derive(Clone, Debug)]
pub struct WavData {
    pub sample_rate: u32,
    pub channels: u16,
    pub samples: Vec<f64>,
}

impl WavData {
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }
}

fn io_err(op: &'static str, path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Io {
        op,
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Reads PCM WAV with 8-bit unsigned or 16-bit signed samples; any rate or
/// channel count. Unknown chunks are skipped.
pub fn read_wav(path: &Path) -> Result<WavData> {
    let bytes = std::fs::read(path).map_err(|e| io_err("wav read", path, e.to_string()))?;
    parse_wav(&bytes).map_err(|reason| io_err("wav read", path, reason))
}

pub fn parse_wav(bytes: &[u8]) -> std::result::Result<WavData, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        let Some(body_end) = body_end else {
            return Err("chunk overruns file".into());
        };
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err("fmt chunk too short".into());
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_end + (size % 2);
    }
    let (format, channels, rate, bits) = fmt.ok_or("missing fmt chunk")?;
    let data = data.ok_or("missing data chunk")?;
    if format != 1 {
        return Err(format!("unsupported WAV format code {format} (PCM only)"));
    }
    if channels == 0 || rate == 0 {
        return Err("zero channels or sample rate".into());
    }
    let samples = match bits {
        8 => data.iter().map(|&b| (b as f64 - 128.0) / 128.0).collect(),
        16 => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        other => return Err(format!("unsupported bit depth {other} (8 or 16)")),
    };
    Ok(WavData {
        sample_rate: rate,
        channels,
        samples,
    })
}

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1].
pub fn write_wav_mono16(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let bytes = encode_wav_mono16(sample_rate, samples);
    std::fs::write(path, bytes).map_err(|e| io_err("wav write", path, e.to_string()))
}

pub fn encode_wav_mono16(sample_rate: u32, samples: &[f64]) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mono16_roundtrip_is_close() {
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 / 20.0).sin() * 0.8).collect();
        let bytes = encode_wav_mono16(16000, &samples);
        let wav = parse_wav(&bytes).unwrap();
        assert_eq!(wav.sample_rate, 16000);
        assert_eq!(wav.channels, 1);
        assert_eq!(wav.samples.len(), 100);
        // encode scales by 32767, decode divides by 32768, so the roundtrip
        // error is |v|/32768 plus half a quantization step
        for (a, b) in samples.iter().zip(&wav.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn eight_bit_decoding_centers_at_128() {
        // hand-assembled minimal 8-bit mono file
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 3).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[128, 255, 0]);
        let wav = parse_wav(&bytes).unwrap();
        assert_eq!(wav.samples[0], 0.0);
        assert!(wav.samples[1] > 0.99);
        assert_eq!(wav.samples[2], -1.0);
    }

    #[test]
    fn rejects_non_wav_bytes() {
        assert!(parse_wav(b"OggS....").is_err());
        assert!(parse_wav(b"").is_err());
    }
}
