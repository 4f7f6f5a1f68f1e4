use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use clipsight_tensor::Tensor;

use crate::audio::ingest::AudioClip;
use crate::error::{ModelError, Result};

pub const WIN_SAMPLES: usize = 400; // 25 ms at 16 kHz
pub const HOP_SAMPLES: usize = 160; // 10 ms
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 64;
pub const FMIN_HZ: f64 = 125.0;
pub const FMAX_HZ: f64 = 7500.0;
pub const LOG_FLOOR: f64 = 1e-10;

const SAMPLE_RATE: f64 = 16000.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// The 66 band-edge frequencies: 64 triangles equally spaced on the mel
/// scale between 125 and 7500 Hz. Filter m spans edges m..m+2 and peaks at
/// edge m+1.
pub fn mel_band_edges() -> Vec<f64> {
    let lo = hz_to_mel(FMIN_HZ);
    let hi = hz_to_mel(FMAX_HZ);
    (0..N_MELS + 2)
        .map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Triangular filterbank over the magnitude-spectrum bins, [N_MELS][N_FFT/2+1].
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let edges = mel_band_edges();
    let bins = N_FFT / 2 + 1;
    let mut filters = vec![vec![0.0; bins]; N_MELS];
    for (m, filter) in filters.iter_mut().enumerate() {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in filter.iter_mut().enumerate() {
            let f = k as f64 * SAMPLE_RATE / N_FFT as f64;
            if f >= left && f <= center && center > left {
                *w = (f - left) / (center - left);
            } else if f > center && f <= right && right > center {
                *w = (right - f) / (right - center);
            }
        }
    }
    filters
}

fn hann_window() -> Vec<f64> {
    (0..WIN_SAMPLES)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WIN_SAMPLES as f64).cos())
        .collect()
}

/// Log-mel spectrogram of an ingested clip: 25 ms Hann windows with 10 ms
/// hop, magnitude spectrum, 64 mel triangles over 125-7500 Hz, natural log
/// floored at 1e-10. A 30 s clip gives a [2998, 64] tensor.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<Tensor> {
    mel_spectrogram_of(&clip.samples)
}

pub fn mel_spectrogram_of(samples: &[f64]) -> Result<Tensor> {
    if samples.len() < WIN_SAMPLES {
        return Err(ModelError::bad_input(
            "mel_spectrogram",
            format!("{} samples is shorter than one {WIN_SAMPLES}-sample window", samples.len()),
        ));
    }
    let n_frames = (samples.len() - WIN_SAMPLES) / HOP_SAMPLES + 1;
    let window = hann_window();
    let filters = mel_filterbank();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut mags = vec![0.0; N_FFT / 2 + 1];

    let mut data = vec![0.0; n_frames * N_MELS];
    for frame in 0..n_frames {
        let start = frame * HOP_SAMPLES;
        for i in 0..N_FFT {
            buf[i] = if i < WIN_SAMPLES {
                Complex::new(samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, m) in mags.iter_mut().enumerate() {
            *m = buf[k].norm();
        }
        for (m, filter) in filters.iter().enumerate() {
            let energy: f64 = filter.iter().zip(&mags).map(|(w, x)| w * x).sum();
            data[frame * N_MELS + m] = energy.max(LOG_FLOOR).ln();
        }
    }
    Ok(Tensor::new(vec![n_frames, N_MELS], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::ingest::{ingest_audio, CLIP_SAMPLES};

    #[test]
    fn thirty_second_clip_gives_2998_frames() {
        let clip = ingest_audio(&vec![0.0; CLIP_SAMPLES], 1, 16000.0).unwrap();
        let mel = mel_spectrogram(&clip).unwrap();
        assert_eq!(mel.shape(), &[2998, 64]);
    }

    #[test]
    fn silence_sits_at_the_log_floor() {
        let clip = ingest_audio(&vec![0.0; CLIP_SAMPLES], 1, 16000.0).unwrap();
        let mel = mel_spectrogram(&clip).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(mel.iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn pure_tone_peaks_in_the_band_containing_it() {
        let tone: Vec<f64> = (0..CLIP_SAMPLES)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let clip = ingest_audio(&tone, 1, 16000.0).unwrap();
        let mel = mel_spectrogram(&clip).unwrap();

        let mut mean = vec![0.0; N_MELS];
        for r in 0..mel.shape()[0] {
            for (m, acc) in mean.iter_mut().enumerate() {
                *acc += mel.at2(r, m);
            }
        }
        let hot = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;

        // expected band: the filter with the largest weight at the FFT bin
        // holding 1 kHz (bin 32 at 31.25 Hz spacing)
        let filters = mel_filterbank();
        let k0 = (1000.0 * N_FFT as f64 / 16000.0).round() as usize;
        let expect = filters
            .iter()
            .enumerate()
            .max_by(|a, b| a.1[k0].partial_cmp(&b.1[k0]).unwrap())
            .unwrap()
            .0;
        assert_eq!(hot, expect);
        let edges = mel_band_edges();
        assert!(edges[expect] < 1000.0 && 1000.0 < edges[expect + 2]);
    }

    #[test]
    fn band_edges_span_125_to_7500() {
        let edges = mel_band_edges();
        assert_eq!(edges.len(), 66);
        assert!((edges[0] - 125.0).abs() < 1e-9);
        assert!((edges[65] - 7500.0).abs() < 1e-9);
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
    }
}
