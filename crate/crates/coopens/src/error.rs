use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flag, config entry or argument combination.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] coopens_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: format error at byte {offset}: {reason}", path.display())]
    Format { path: PathBuf, offset: u64, reason: String },
    /// A check the command runs itself did not pass (e.g. gradient checks).
    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            offset,
            reason: reason.into(),
        }
    }

    /// 2 for invalid input parameters, 3 for everything that fails while running.
    pub fn exit_code(&self) -> u8 {
        use coopens_core::Error as C;
        match self {
            Error::Usage(_) | Error::Core(C::Parameter { .. } | C::Dimension { .. }) => 2,
            _ => 3,
        }
    }
}
