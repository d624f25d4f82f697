use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tfsep_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Audio { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("record '{id}': {source}")]
    Record { id: String, source: Box<Error> },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn record(id: &str, source: Error) -> Self {
        Error::Record { id: id.to_string(), source: Box::new(source) }
    }

    /// 1 for problems with the user's input, 2 for failures inside the tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(tfsep_core::Error::NonFinite(_)) => 2,
            Error::Core(_) => 1,
            Error::Io { source, .. } => match source.kind() {
                io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied | io::ErrorKind::AlreadyExists => 1,
                _ => 2,
            },
            Error::Record { source, .. } => source.exit_code(),
            Error::Audio { .. } | Error::Manifest { .. } | Error::Checkpoint { .. } | Error::Usage(_) => 1,
        }
    }
}
