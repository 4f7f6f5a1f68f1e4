use clipsight_tensor::Tensor;

use crate::audio::mel::N_MELS;
use crate::error::{ModelError, Result};

pub const PATCH_FRAMES: usize = 96; // 960 ms of 10 ms frames
pub const PATCH_HOP: usize = 49; // 490 ms

/// Overlapping moment patches; a 30 s clip yields exactly 60.
#[derive(Clone, Debug)]
pub struct MomentPatchSeries {
    /// Each patch is [PATCH_FRAMES, N_MELS].
    pub patches: Vec<Tensor>,
}

impl MomentPatchSeries {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Stacks all patches into one [count, PATCH_FRAMES, N_MELS, 1] tensor
    /// ready for the convolutional classifier.
    pub fn stacked(&self) -> Tensor {
        let count = self.patches.len();
        let mut data = Vec::with_capacity(count * PATCH_FRAMES * N_MELS);
        for p in &self.patches {
            data.extend_from_slice(p.data());
        }
        Tensor::new(vec![count, PATCH_FRAMES, N_MELS, 1], data).expect("static shape")
    }
}

/// First frame index of patch `i`.
pub fn patch_start(i: usize) -> usize {
    i * PATCH_HOP
}

pub fn patchify(mel: &Tensor) -> Result<MomentPatchSeries> {
    let shape = mel.shape();
    if shape.len() != 2 || shape[1] != N_MELS {
        return Err(ModelError::bad_input(
            "patchify",
            format!("expected [frames, {N_MELS}] input, got {shape:?}"),
        ));
    }
    let frames = shape[0];
    if frames < PATCH_FRAMES {
        return Err(ModelError::bad_input(
            "patchify",
            format!("{frames} frames is fewer than one {PATCH_FRAMES}-frame patch"),
        ));
    }
    let count = (frames - PATCH_FRAMES) / PATCH_HOP + 1;
    let mut patches = Vec::with_capacity(count);
    for i in 0..count {
        let start = patch_start(i);
        let mut data = Vec::with_capacity(PATCH_FRAMES * N_MELS);
        for r in start..start + PATCH_FRAMES {
            data.extend_from_slice(mel.row(r));
        }
        patches.push(Tensor::new(vec![PATCH_FRAMES, N_MELS], data)?);
    }
    Ok(MomentPatchSeries { patches })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_mel(frames: usize) -> Tensor {
        let data: Vec<f64> = (0..frames * N_MELS).map(|i| (i / N_MELS) as f64).collect();
        Tensor::new(vec![frames, N_MELS], data).unwrap()
    }

    #[test]
    fn full_clip_gives_sixty_patches() {
        let series = patchify(&ramp_mel(2998)).unwrap();
        assert_eq!(series.len(), 60);
        assert_eq!(series.stacked().shape(), &[60, 96, 64, 1]);
    }

    #[test]
    fn patch_zero_covers_first_96_frames_and_59_starts_at_2891() {
        let series = patchify(&ramp_mel(2998)).unwrap();
        assert_eq!(series.patches[0].at2(0, 0), 0.0);
        assert_eq!(series.patches[0].at2(95, 0), 95.0);
        assert_eq!(patch_start(59), 2891);
        assert_eq!(series.patches[59].at2(0, 0), 2891.0);
        assert_eq!(series.patches[59].at2(95, 0), 2986.0);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        assert!(patchify(&ramp_mel(95)).is_err());
        assert!(patchify(&ramp_mel(96)).map(|s| s.len()).unwrap() == 1);
    }
}
