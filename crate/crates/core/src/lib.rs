//! Coupled U-Nets (CU-Net): builders for naive dense, stacked and coupled
//! U-Net architectures, a small CPU autodiff engine to run and train them,
//! and a synthetic keypoint harness for desk-scale experiments.

pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod supervision;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
