//! Tone-segment audio tracks with known sound-category timelines.

use std::sync::OnceLock;

use clipsight_models::audio::classifier::SoundCategory;
use clipsight_models::audio::ingest::CLIP_SAMPLES;
use clipsight_tensor::Stream;

use super::{Element, SynthSpec};

/// Segments per 30 s clip. Each one spans a classifier hop (49 mel frames),
/// so moment patch `m` hears exactly segments `m` and `m + 1`.
pub const SEGMENTS: usize = 62;
/// Samples per segment at 16 kHz (49 frames of 160-sample hop).
pub const SEG_SAMPLES: usize = 49 * 160;
/// Moment patches per clip.
pub const MOMENTS: usize = 60;

/// One sine frequency per sound category, all inside the mel band. Silence
/// stays at zero amplitude.
const CLASS_FREQS: [f64; 8] = [220.0, 880.0, 0.0, 1600.0, 2300.0, 3100.0, 4200.0, 5600.0];

const SILENCE: u8 = 2;

fn tone_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        CLASS_FREQS
            .iter()
            .enumerate()
            .map(|(k, &freq)| {
                (0..SEG_SAMPLES)
                    .map(|j| {
                        let t = j as f64 / 16_000.0;
                        let base = (2.0 * std::f64::consts::PI * freq * t).sin();
                        if k == 1 {
                            // A harmonic makes music spectrally richer.
                            (base + 0.5 * (2.0 * std::f64::consts::PI * 1.5 * freq * t).sin())
                                / 1.5
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect()
    })
}

/// Count of moments whose two underlying segments include `class`.
pub fn moment_count(segments: &[Vec<u8>], class: u8) -> usize {
    (0..MOMENTS)
        .filter(|&m| segments[m].contains(&class) || segments[m + 1].contains(&class))
        .count()
}

fn fallback_class(u: f64) -> u8 {
    // Silence, Things, Animal dominate; the three control-only categories
    // stay rare but present so their duration columns are not constant.
    const CUM: [(f64, u8); 6] = [(0.34, 2), (0.61, 3), (0.81, 4), (0.87, 5), (0.93, 6), (1.0, 7)];
    for (cut, class) in CUM {
        if u < cut {
            return class;
        }
    }
    7
}

pub(super) fn draw(spec: &SynthSpec, v: usize, signals: &mut [f64]) -> (Vec<Vec<u8>>, Vec<f64>) {
    let mut s = Stream::new(spec.seed, "video-audio", v as u64);
    let human_share = s.uniform(0.2, 0.6);
    let music_share = s.uniform(0.15, 0.6);

    let mut segments: Vec<Vec<u8>> = Vec::with_capacity(SEGMENTS);
    for _ in 0..SEGMENTS {
        let mut classes = Vec::new();
        if s.bernoulli(music_share) {
            classes.push(1);
        }
        if s.bernoulli(human_share) {
            classes.push(0);
        }
        if classes.is_empty() {
            classes.push(fallback_class(s.unit()));
        }
        classes.sort_unstable();
        segments.push(classes);
    }

    let tones = tone_table();
    let mut samples = vec![0.0; CLIP_SAMPLES];
    for (seg, classes) in segments.iter().enumerate() {
        let offset = seg * SEG_SAMPLES;
        let len = SEG_SAMPLES.min(CLIP_SAMPLES - offset);
        for &class in classes {
            let amp = s.uniform(0.25, 0.4);
            let phase = s.range(SEG_SAMPLES);
            if class == SILENCE {
                continue;
            }
            let tone = &tones[class as usize];
            for j in 0..len {
                samples[offset + j] += amp * tone[(j + phase) % SEG_SAMPLES];
            }
        }
    }

    for (j, e) in spec.effects.iter().enumerate() {
        if e.element == Element::Audio {
            let class = SoundCategory::from_name(&e.feature)
                .map(|c| c.index() as u8)
                .unwrap_or(u8::MAX);
            signals[j] = moment_count(&segments, class) as f64;
        }
    }
    (segments, samples)
}
