//! Cross-camera identification with disentangled latent subspaces.
//!
//! The numeric core (model, objective, shift statistics, trainer) is generic
//! over [`Scalar`]; the aliases below fix the common widths.

// `!(x > 0)` is the NaN-rejecting form used throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod ingestion;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod shift;
pub mod synthetic;
pub mod trainer;
pub mod types;

pub use config::{ExperimentConfig, LatentPartition, Subspace};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{BoundingBox, CameraId, ClassWeightVector, Identity, Sample, UnlabeledSample};

pub type Net64 = model::DisentangleNet<f64>;
pub type Net32 = model::DisentangleNet<f32>;
