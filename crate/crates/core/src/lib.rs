//! Continual semantic segmentation on synthetic per-pixel features.
//!
//! The pipeline: [`datagen`] builds labeled feature grids and the per-step
//! task stream, [`model`] holds the backbone and the growing classifier,
//! [`trainer`] runs the fine-tuning strategies step by step, [`probing`]
//! fits linear probes on frozen embeddings, [`metrics`] computes mIoU and
//! the moving distance of old classifiers, and [`report`] writes CSV/SVG.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the type for common use.

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod model;
pub mod probing;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SegModelF64 = model::SegModel<f64>;
pub type SegModelF32 = model::SegModel<f32>;
pub type GradsF64 = model::Grads<f64>;
pub type GradsF32 = model::Grads<f32>;
pub type RunArtifactsF64 = metrics::RunArtifacts<f64>;
pub type RunArtifactsF32 = metrics::RunArtifacts<f32>;
pub type MatrixF64 = tensor::Matrix<f64>;
