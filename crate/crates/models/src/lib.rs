//! Interpretable deep models for video content: a transformer text encoder
//! with readable attention, an audio moment-attention model over mel
//! spectrogram patches, and small convolutional image models with
//! gradient-weighted activation maps. All models share the tape-based
//! autodiff engine, run on per-example tapes, and train deterministically
//! for a given seed.

pub mod audio;
pub mod error;
pub mod image;
pub mod rnn;
pub mod text;
pub mod train;

pub use error::{ModelError, Result};
pub use train::{fit, mean_loss, OutcomeKind, Phase, TrainCfg, TrainReport};
