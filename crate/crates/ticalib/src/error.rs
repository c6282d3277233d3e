use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is outside its documented range.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller violated an operation's precondition (e.g. missing history).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Noise calibration could not bracket or reach the target BER.
    #[error("calibration failure: {0}")]
    Calibration(String),
    /// Bit streams could not be aligned for BER counting.
    #[error("alignment failure: {0}")]
    Alignment(String),
    /// A metric is undefined for the given inputs (e.g. zero reference energy).
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
