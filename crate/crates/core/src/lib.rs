//! Two-stage audio-visual deepfake detection.
//!
//! Stage one pre-trains dual transformer encoders on authentic clips with
//! three self-supervised objectives: masked hierarchical reconstruction,
//! segment-level audio-visual contrast with soft negatives, and
//! cross-modal reconstruction of global semantic features. Stage two
//! fine-tunes a classifier that adaptively pools every encoder level and
//! the cross-modal interaction features.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod evaluation;
pub mod head;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};

/// Crate version recorded in checkpoints and run manifests.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
