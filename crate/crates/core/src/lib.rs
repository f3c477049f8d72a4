//! Frequency-decomposition segmentation core.
//!
//! This crate implements the full numerical stack for a multi-frequency
//! encoder-decoder segmentation network:
//!
//! - [`tensor`]: rank-4 tensors, a define-by-run reverse-mode autodiff
//!   tape, and finite-difference gradient checking.
//! - [`spectral`]: shifted 2-D DFT, power-spectrum cutoff search and
//!   low/high-frequency image decomposition.
//! - [`targets`]: edge and normalized-distance ground truth derived from a
//!   binary region mask.
//! - [`network`]: three frequency encoders with guided residuals, a
//!   dilated-convolution attention fusion block, and a deeply supervised
//!   multi-task decoder.
//! - [`loss`] / [`metrics`]: the deep-supervision objective and the five
//!   evaluation metrics.
//! - [`train`]: Adam + cosine annealing optimization loop, augmentation,
//!   synthetic data generation, and the ablation runner.

pub mod augment;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod spectral;
pub mod synth;
pub mod targets;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Param, ParamId, ParamStore, Tape, Tensor, ValueId};
