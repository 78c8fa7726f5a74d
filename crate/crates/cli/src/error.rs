use thiserror::Error;

/// Failures of a CLI run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] cbi_core::Error),

    #[error("verification suite failed: {passed}/{total} checks passed, {required} required")]
    SuiteFailed {
        passed: usize,
        total: usize,
        required: usize,
    },
}

impl CliError {
    /// 1 for validation and I/O errors, 2 for numerical failures, 3 for a failed suite.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Core(e) if e.is_domain() => 1,
            CliError::Core(_) => 2,
            CliError::SuiteFailed { .. } => 3,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: "csv output".into(),
                source,
            },
            other => CliError::Config(format!("csv: {other:?}")),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
