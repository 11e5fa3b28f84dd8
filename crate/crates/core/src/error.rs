use thiserror::Error;

/// Errors raised by the simulator and the analysis layer.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Sizes, resolutions or indices are inconsistent.
    #[error("invalid size: {0}")]
    Size(String),

    /// A solver path exceeded the blow-up sentinel or produced a non-finite value.
    #[error("blow-up on path {path_id} at step {step}, mode {mode} (value {value:e})")]
    BlowUp {
        path_id: u64,
        step: usize,
        mode: usize,
        value: f64,
    },

    /// Ensembles that must share a noise realisation do not.
    #[error("ensembles are not coupled: {0}")]
    Uncoupled(String),

    /// A manifest failed validation; every violated constraint is listed.
    #[error("manifest validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn size<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Size(msg.into()))
}
