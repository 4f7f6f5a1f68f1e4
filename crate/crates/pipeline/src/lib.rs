//! Dataset plumbing and study orchestration for the interpretable
//! influencer-video models: manifest records and outcome transforms, brand
//! and disclosure matching, splits and slice windows, a synthetic corpus
//! generator with planted effects, training/export orchestration for the six
//! unstructured models, the combined linear model, the two-step
//! interpretation filter, and practitioner scoring.

pub mod brand;
pub mod elements;
pub mod error;
pub mod exports;
pub mod features;
pub mod records;
pub mod slice;
pub mod split;
pub mod synth;
pub mod train;

pub use error::{PipelineError, Result};
