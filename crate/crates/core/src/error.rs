use alloc::string::String;
use thiserror::Error;

/// Errors raised by the signal-processing and model routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("signal has {len} samples, shorter than one frame of {frame_len}")]
    TooShort { len: usize, frame_len: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate source: {0} has zero power")]
    DegenerateSource(&'static str),
    #[error("degenerate noise: selected noise segment has zero power")]
    DegenerateNoise,
    #[error("degenerate signal: zero power input to {0}")]
    DegenerateSignal(&'static str),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRate { expected: u32, found: u32 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;
