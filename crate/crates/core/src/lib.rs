//! Autonomous-experiment engine for gridded image-spectrum datasets.
//!
//! The library simulates closed-loop measurement campaigns on a pre-acquired
//! grid of hysteresis loops: a deep-kernel Gaussian process maps structure-image
//! patches to a scalar target (a physical descriptor or a novelty score), an
//! acquisition rule picks the next pixel to measure, and the loop repeats.
//! Targets can be a physical scalarizer (loop area), one of five novelty
//! scorers recomputed over the growing measured set, or novelty combined with
//! strategic under-sampling plus periodic remote jumps.
//!
//! Numeric kernels are generic over the scalar type through [`Scalar`];
//! the experiment pipeline instantiates them at `f64` (see the type aliases
//! at the crate root). Dataset storage is 32-bit on disk and in memory,
//! with all computation done in 64-bit.

pub mod acquire;
pub mod dataspace;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod novelty;
pub mod scalar;
pub mod scalarize;
pub mod surrogate;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub use dataspace::{GridDataset, MeasuredSet, Patch, VoltageWaveform};
pub use engine::{ExperimentTrace, Mode, RunConfig, TraceRecord};
pub use novelty::{NoveltyConfig, NoveltyMethod};
pub use synthgen::SynthConfig;

/// Deep-kernel GP model at the pipeline's working precision.
pub type DklModel = surrogate::DklModel<f64>;
/// Feature network at the pipeline's working precision.
pub type FeatureNet = surrogate::FeatureNet<f64>;
/// GP hyperparameters at the pipeline's working precision.
pub type GpHyper = surrogate::GpHyper<f64>;
