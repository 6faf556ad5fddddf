use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hrpca::Error),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("writing to stdout: {0}")]
    Stdout(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad input or configuration, 3 for numerical failure, 4 for schema mismatch.
    pub fn exit_code(&self) -> u8 {
        use hrpca::Error as E;
        match self {
            CliError::Core(E::DegenerateSpectrum | E::NumericalFailure { .. }) => 3,
            CliError::Core(E::SchemaMismatch(_) | E::Version(_)) => 4,
            CliError::Core(_)
            | CliError::Config { .. }
            | CliError::Usage(_)
            | CliError::Stdout(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
