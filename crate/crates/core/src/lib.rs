//! Sharpness-aware training on a small reverse-mode autodiff core.
//!
//! - [`tensor`] and [`tape`]: dense `f64` kernels and reverse-mode AD with
//!   controllable stop-points.
//! - [`model`]: MLPs, parameter units and the [`model::Objective`] interface.
//! - [`optim`]: SGD, SAM and ESAM steps.
//! - [`data`]: synthetic datasets, IDX files and batching.
//! - [`diagnostics`]: sharpness, subset losses and gradients, linearity,
//!   loss landscapes and the SWP cost model.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
