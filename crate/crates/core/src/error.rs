//! Error type shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid npy file: {reason}")]
    NpyFormat { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// An input violated a stated invariant; names the layer and field.
    #[error("layer `{layer}`, field `{field}`: {reason}")]
    Validation {
        layer: String,
        field: String,
        reason: String,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("L0 budget error: {0}")]
    Budget(String),

    /// Gradient descent produced non-finite values.
    #[error("gradient descent diverged (non-finite values); retry with a smaller learning rate")]
    Divergence,

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    /// The CLI maps these to exit code 3, everything else to 2.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence)
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(
        layer: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Validation {
            layer: layer.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}
