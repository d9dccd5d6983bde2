use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = AencError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AencError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        source: aenc_core::Error,
    },
    #[error(transparent)]
    Core(#[from] aenc_core::Error),
    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("validation failed with {0} issue(s)")]
    Invalid(usize),
}

impl AencError {
    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| AencError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        AencError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 1 for validation failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AencError::Invalid(_) => 1,
            _ => 2,
        }
    }
}
