use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UmcfError>;

#[derive(Debug, Error)]
pub enum UmcfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fusion diverged at iteration {iteration}: residual {residual:.6e} exceeds 10x initial {initial:.6e}")]
    Diverged {
        iteration: usize,
        residual: f64,
        initial: f64,
        diagnostics: Box<crate::fusion::FusionDiagnostics>,
    },
}

impl UmcfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        UmcfError::InvalidInput(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        UmcfError::DimensionMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        UmcfError::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        UmcfError::Format {
            offset,
            message: msg.into(),
        }
    }

    /// True for errors that come from reading or decoding files rather than
    /// from validating values.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, UmcfError::Io { .. } | UmcfError::Format { .. })
    }
}
