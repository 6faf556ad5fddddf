use std::path::PathBuf;

/// Errors produced anywhere in the auditing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("degenerate spectrum: all singular values are zero")]
    DegenerateSpectrum,

    #[error("SVD did not converge after {iterations} sweeps")]
    NumericalFailure { iterations: usize },

    #[error("storage error at {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "integrity check failed for level `{level}`: stored hash {stored}, computed {computed}"
    )]
    Integrity {
        level: String,
        stored: String,
        computed: String,
    },

    #[error("unsupported bundle format version {0}")]
    Version(u64),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::SchemaMismatch(msg.into())
    }
}
