//! Reverse-mode automatic differentiation over dense row-major `f64`
//! matrices.
//!
//! A [`Tape`] records one forward pass. Parameters live in a [`ParamStore`]
//! and enter a tape through [`Tape::param`]; [`Tape::backward`] returns the
//! gradient of a scalar output with respect to every parameter it reached.
//! [`Tape::detach`] cuts a value out of the graph.

mod matrix;
mod optim;
mod params;
mod tape;

pub use matrix::Matrix;
pub use optim::AdamW;
pub use params::{ParamEntry, ParamId, ParamStore, Stage};
pub use tape::{Gradients, Tape, Var};
