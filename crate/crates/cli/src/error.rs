use std::io;

/// Harness-level errors; `category` yields the one-word machine-parsable
/// class printed on exit.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Pipeline(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config-error",
            CliError::Data(_) => "data-error",
            CliError::Pipeline(_) => "pipeline-error",
            CliError::Usage(_) => "usage-error",
            CliError::Parse { .. } => "parse-error",
            CliError::Io(_) => "io-error",
        }
    }
}
