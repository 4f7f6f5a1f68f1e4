use serde::{Deserialize, Serialize};

pub const WINDOW_SECONDS: f64 = 30.0;
pub const FRAMES_PER_WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceKind {
    Beginning,
    Middle,
    End,
}

impl SliceKind {
    pub const ALL: [SliceKind; 3] = [SliceKind::Beginning, SliceKind::Middle, SliceKind::End];

    pub fn name(self) -> &'static str {
        match self {
            SliceKind::Beginning => "beginning",
            SliceKind::Middle => "middle",
            SliceKind::End => "end",
        }
    }

    pub fn parse(name: &str) -> Option<SliceKind> {
        SliceKind::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// A 30-second analysis window within a video.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceWindow {
    pub start: f64,
    /// The video was shorter than 30 s, so only the beginning window exists.
    pub short_video: bool,
}

/// Window placement: beginning = [0, 30), middle = centered, end = the last
/// 30 s. Videos under 30 s fall back to the beginning window, flagged.
pub fn select_slice(video_len_s: f64, which: SliceKind) -> SliceWindow {
    if video_len_s < WINDOW_SECONDS {
        return SliceWindow { start: 0.0, short_video: true };
    }
    let start = match which {
        SliceKind::Beginning => 0.0,
        SliceKind::Middle => (video_len_s - WINDOW_SECONDS) / 2.0,
        SliceKind::End => video_len_s - WINDOW_SECONDS,
    };
    SliceWindow { start, short_video: false }
}

/// Five equally spaced frame offsets spanning the window, endpoints
/// included: start, start+7.5, ..., start+30.
pub fn frame_offsets(window_start: f64) -> [f64; FRAMES_PER_WINDOW] {
    let mut out = [0.0; FRAMES_PER_WINDOW];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = window_start + WINDOW_SECONDS * k as f64 / (FRAMES_PER_WINDOW - 1) as f64;
    }
    out
}

/// The frame at or immediately after an offset: the smallest frame index i
/// with i/fps >= offset. Returns (index, frame time in seconds).
pub fn frame_at_or_after(offset_s: f64, fps: f64) -> (usize, f64) {
    // A hair of slack so offsets that land exactly on a frame keep it.
    let idx = (offset_s * fps - 1e-9).ceil().max(0.0) as usize;
    (idx, idx as f64 / fps)
}
