use std::path::PathBuf;

/// Errors surfaced by the command-line tools.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sgvae_core::Error),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("verification failed:\n{0}")]
    Verify(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status: 1 for failed checks, 3 for non-finite values,
    /// 2 for everything the user has to fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verify(_) => 1,
            Error::Core(sgvae_core::Error::NonFinite { .. }) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
