//! Multi-scale, multi-resolution time-series pattern machine.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with reverse-mode differentiation
//! - [`nn`]: parameters, linear/attention layers, Adam
//! - [`spectral`]: DFT amplitudes and dominant-period extraction
//! - [`mixer`]: time imaging, dual-axis decomposition, scale and resolution mixing
//! - [`model`]: the full encoder with per-scale output heads
//! - [`data`], [`metrics`], [`tasks`]: datasets, evaluation, and task protocols

pub mod data;
pub mod error;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};

pub use model::{EnsembleMode, ModelConfig, MultiScaleMixer, TaskKind};
pub use tensor::{Tensor, TensorError};
