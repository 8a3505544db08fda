//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or dimensions that do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter value outside its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed binary or text input (checkpoints, IDX files, configs).
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A weight matrix with a zero smallest singular value where the
    /// spectral machinery needs it strictly positive.
    #[error("singular weight matrix at layer {layer}{}", epoch_suffix(*.epoch))]
    SingularWeight { layer: usize, epoch: Option<usize> },

    /// A loss/gradient combination the backward pass does not support.
    #[error("unsupported loss: {0}")]
    UnsupportedLoss(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn epoch_suffix(epoch: Option<usize>) -> String {
    match epoch {
        Some(e) => format!(" (epoch {e})"),
        None => String::new(),
    }
}
