use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tag_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// Stable identifier used in the machine-readable error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(tag_core::Error::Leakage(_)) => "leakage",
            Error::Core(tag_core::Error::Config(_)) => "config",
            Error::Core(tag_core::Error::InvalidScene { .. }) => "invalid_scene",
            Error::Core(tag_core::Error::Divergence(_)) => "divergence",
            Error::Core(_) => "contract",
            Error::Io { .. } => "io",
            Error::Missing(_) => "missing_artifact",
            Error::Parse { .. } => "parse",
            Error::ConfigKey { .. } => "config",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Usage(_) => "usage",
        }
    }
}
