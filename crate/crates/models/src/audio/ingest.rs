use crate::error::{ModelError, Result};

pub const TARGET_RATE: f64 = 16000.0;
pub const CLIP_SECONDS: f64 = 30.0;
pub const CLIP_SAMPLES: usize = 480_000;

/// 30 seconds of 16 kHz mono audio, exactly 480,000 samples.
#[derive(Clone, Debug)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    /// True when the source was shorter than 30 s and had to be zero-padded.
    pub padded: bool,
}

/// Downmixes interleaved channels to mono, resamples to 16 kHz by linear
/// interpolation, and pads or truncates to exactly 30 s.
pub fn ingest_audio(samples: &[f64], channels: usize, rate: f64) -> Result<AudioClip> {
    if samples.is_empty() {
        return Err(ModelError::bad_input("ingest_audio", "empty input"));
    }
    if channels == 0 {
        return Err(ModelError::bad_input("ingest_audio", "zero channels"));
    }
    if !(rate > 0.0) {
        return Err(ModelError::bad_input("ingest_audio", format!("bad sample rate {rate}")));
    }
    if samples.len() % channels != 0 {
        return Err(ModelError::bad_input(
            "ingest_audio",
            format!("{} samples not divisible by {} channels", samples.len(), channels),
        ));
    }

    let mono: Vec<f64> = if channels == 1 {
        samples.to_vec()
    } else {
        samples
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };

    let resampled = if rate == TARGET_RATE {
        mono
    } else {
        let step = rate / TARGET_RATE;
        let mut out = Vec::with_capacity((mono.len() as f64 / step).ceil() as usize);
        let mut n = 0usize;
        loop {
            let src = n as f64 * step;
            let i = src.floor() as usize;
            if i >= mono.len() {
                break;
            }
            let frac = src - i as f64;
            let a = mono[i];
            let b = if i + 1 < mono.len() { mono[i + 1] } else { mono[i] };
            out.push(a * (1.0 - frac) + b * frac);
            n += 1;
        }
        out
    };

    let mut out = resampled;
    let padded = out.len() < CLIP_SAMPLES;
    out.resize(CLIP_SAMPLES, 0.0);
    Ok(AudioClip { samples: out, padded })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereo_44100_yields_exact_clip_length() {
        let frames = (44100.0 * CLIP_SECONDS) as usize;
        let mut interleaved = Vec::with_capacity(frames * 2);
        for i in 0..frames {
            let t = i as f64 / 44100.0;
            interleaved.push((2.0 * std::f64::consts::PI * 440.0 * t).sin());
            interleaved.push(0.0);
        }
        let clip = ingest_audio(&interleaved, 2, 44100.0).unwrap();
        assert_eq!(clip.samples.len(), CLIP_SAMPLES);
        assert!(!clip.padded);
        // downmix halves the left-only tone
        assert!(clip.samples.iter().cloned().fold(0.0f64, f64::max) < 0.51);
    }

    #[test]
    fn native_rate_passes_through_sample_exact() {
        let src: Vec<f64> = (0..CLIP_SAMPLES).map(|i| ((i % 97) as f64 - 48.0) / 50.0).collect();
        let clip = ingest_audio(&src, 1, TARGET_RATE).unwrap();
        assert_eq!(clip.samples, src);
    }

    #[test]
    fn silence_stays_silent_and_short_input_pads() {
        let clip = ingest_audio(&vec![0.0; 16000], 1, TARGET_RATE).unwrap();
        assert!(clip.padded);
        assert_eq!(clip.samples.len(), CLIP_SAMPLES);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_empty_and_invalid_args() {
        assert!(ingest_audio(&[], 1, 16000.0).is_err());
        assert!(ingest_audio(&[0.0], 0, 16000.0).is_err());
        assert!(ingest_audio(&[0.0], 1, 0.0).is_err());
        assert!(ingest_audio(&[0.0; 3], 2, 16000.0).is_err());
    }
}
