//! EEG seizure detection: Haar-wavelet denoising, standardization and a
//! 1D-CNN with multi-head self-attention, trained with hand-written
//! forward/backward passes.
//!
//! Pipeline stages map onto modules:
//!
//! * [`dataset`] loads the 178-sample segment CSV and splits it.
//! * [`preprocess`] denoises each segment and standardizes features.
//! * [`nn`] holds the layers, the assembled model and the gradient checker.
//! * [`optim`] holds the loss, Adam and the training loop.
//! * [`metrics`] computes the confusion matrix and summary scores.
//! * [`cli`] wires everything into the `seizure` command.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod preprocess;

pub use error::{Error, Result};

/// Samples per one-second EEG segment.
pub const SEGMENT_LEN: usize = 178;
