//! Multi-task underage detection on frozen face embeddings.
//!
//! The crate trains a small head stack (a two-layer MLP trunk feeding an
//! age-classification head and one sigmoid head per age threshold) on
//! precomputed embedding vectors, and provides the evaluation machinery
//! around it: threshold calibration at a fixed false-adult rate, DET curves,
//! F-beta reports, and composition of stress-test subsets from image
//! statistics, pose, and expression metadata.
//!
//! Network and loss math are generic over [`Scalar`] (`f32` or `f64`). The
//! command-line front end trains in `f32`, which is also the storage type of
//! checkpoints; gradient-checking tests run in `f64`.

pub mod bench;
pub mod checkpoint;
pub mod data;
mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod sampler;
mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{AgeLabel, EmbeddingStore, Manifest, Metadata, Sample, Split};
pub use losses::{BinaryLabel, FocalForm, GapRule, HeadLossConfig, LossConfig};
pub use metrics::{CalibratedThreshold, ConfusionMatrix, DetCurve, Rate};
pub use net::{ForwardTrace, NetworkConfig, NetworkParams, Variant};
pub use trainer::{TrainConfig, TrainReport};

/// Head stack in single precision, as stored in checkpoints.
pub type NetworkParamsF32 = NetworkParams<f32>;
/// Head stack in double precision.
pub type NetworkParamsF64 = NetworkParams<f64>;
pub type ForwardTraceF32 = ForwardTrace<f32>;
pub type ForwardTraceF64 = ForwardTrace<f64>;
