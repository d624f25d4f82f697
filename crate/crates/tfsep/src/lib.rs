//! File formats, audio IO and the `tfsep` command-line driver around
//! [`tfsep_core`].

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod manifest;
pub mod mix;
pub mod report;
pub mod settings;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
