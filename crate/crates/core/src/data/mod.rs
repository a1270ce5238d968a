//! Clip samples, manifests, media decoding, synthetic fixtures and
//! class-balanced sampling.

mod clip;
mod container;
pub mod fixture;
mod manifest;
pub mod media;
pub mod mel;
mod sampler;

pub use clip::{labels_consistent, ClipSample, Label, MediaStream, ModalityLabel};
pub use container::Tensor;
pub use fixture::{synth_fixture, ClassSpec, FixtureKind};
pub use manifest::{load_manifest, Manifest, ManifestEntry, Split};
pub use media::{load_clip, load_stream};
pub use mel::compute_log_mel;
pub use sampler::{class_balanced_weights, WeightedSampler};
