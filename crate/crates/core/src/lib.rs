//! Attribute-disentangled multi-label learning on synthetic data.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: tensors, reverse-mode autodiff, Adam.
//! * [`datagen`]: Gaussian-copula label sampling, input rendering, shifted
//!   train/test splits and label-correlation diagnostics.
//! * [`model`]: backbone, per-attribute decomposition head, shared classifier.
//! * [`disentangle`]: the randomized feature transform and the training
//!   objectives built on it.
//! * [`analysis`]: metrics, mutual-information probes, group rectification.
//! * [`harness`]: run configuration, training loops, comparisons, artifacts.

pub mod analysis;
pub mod datagen;
pub mod disentangle;
pub mod error;
pub mod format;
pub mod harness;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
