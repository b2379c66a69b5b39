use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: schema mismatch: {message}", path.display())]
    SchemaMismatch { path: PathBuf, message: String },
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: safebac::Error,
    },
    #[error(transparent)]
    Core(#[from] safebac::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::ConfigInvalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::SchemaMismatch {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for configuration and input problems, 3 for
    /// I/O, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } | CliError::SchemaMismatch { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Seed { .. } | CliError::Core(_) => 1,
        }
    }
}
