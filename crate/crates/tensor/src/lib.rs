//! Reverse-mode autodiff on a Wengert tape, plus the supporting pieces the
//! model crates need: deterministic keyed RNG streams, parameter storage with
//! seeded initialization, Adam, checkpoint serialization, and a finite
//! difference gradient checker.
//!
//! Everything is f64 and CPU-only. A [`tape::Tape`] is built per forward pass;
//! [`tape::Tape::backward`] fills gradients for every node that needs them,
//! including interior activations (gradient-based saliency reads those).

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use conv::{ConvCfg, Padding};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use nn::{dense_forward, dense_params, Adam, BoundParams, GradAccum, Init, ParamStore};
pub use rng::Stream;
pub use tape::{gelu_exact, sigmoid_stable, Tape, Var};
pub use tensor::Tensor;
