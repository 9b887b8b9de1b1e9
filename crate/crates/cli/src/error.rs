use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// A core error raised while working on `context`.
    #[error("{context}: {source}")]
    Core { context: String, source: anchorcast::Error },
    #[error("{0}")]
    Usage(String),
    /// The run finished but some windows hit hard errors.
    #[error("{failed} of {total} windows failed; see {}", report.display())]
    Degraded { failed: usize, total: usize, report: PathBuf },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Attaches a context string to core results.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for anchorcast::Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context: context(), source })
    }
}
