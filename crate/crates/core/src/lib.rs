#![cfg_attr(not(test), no_std)]
//! Cross-domain single-channel speech separation.
//!
//! A mixture is encoded into a hybrid feature map (learned strided conv
//! features next to the log-magnitude spectrogram), each feature-map element
//! is embedded by a dilated residual network, clustered into per-speaker
//! masks, and decoded through a transposed-conv path and a mixture-phase
//! inverse STFT path. Everything here is allocation-only and free of IO;
//! file formats and the command-line driver live in the `tfsep` crate.

extern crate alloc;

pub mod config;
pub mod decoder;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod mixer;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod separator;
pub mod train;

pub use error::{Error, Result};
