use std::path::PathBuf;

/// Failures of the command-line pipeline, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: rsae_core::Error,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 4 for file problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), message: err.to_string() }
    }

    pub fn numeric(stage: &'static str) -> impl FnOnce(rsae_core::Error) -> Self {
        move |source| CliError::Numeric { stage, source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
