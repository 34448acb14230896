use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sparsenet::Error),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for data and file problems.
    pub fn exit_code(&self) -> u8 {
        use sparsenet::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(E::Parameter(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
