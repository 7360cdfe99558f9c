//! Modular blended-attention networks for toy video question answering.
//!
//! The crate provides, bottom up:
//!
//! - [`tape`]: dense matrices with reverse-mode automatic differentiation
//!   over the primitives the model needs (matmul, axis softmax, LayerNorm,
//!   chronological 1-D convolution, concatenation, activations);
//! - [`gnnm`]: the generic network module — chronological convolution
//!   masking, feature-component attention, and context-blended attention,
//!   composed with pre-function LayerNorm + activation and residuals;
//! - [`hierarchy`]: clip-level / video-level assembly with a parameter
//!   sharing registry;
//! - [`decoders`]: open-ended, count, and multiple-choice answer decoders
//!   with their losses, each in a regular and a warm-up variant;
//! - [`training`]: deterministic batched training with learning-rate
//!   schedules, per-module learning-rate multipliers, and the two-stage
//!   warm-up / fine-tune procedure;
//! - [`complexity`]: closed-form parameter counts and space lower bounds,
//!   audited against instantiated networks;
//! - [`synth`] and [`dataset`]: a procedural toy video-QA generator and
//!   its on-disk manifest + blob format;
//! - [`checkpoint`]: 32-bit little-endian tensor serialization for model
//!   and trainer state.

pub mod checkpoint;
pub mod complexity;
pub mod dataset;
pub mod decoders;
pub mod error;
pub mod gnnm;
pub mod gradcheck;
pub mod hierarchy;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::{Precision, Scalar};
pub use tape::{SoftmaxAxis, Tape, ValueId};
