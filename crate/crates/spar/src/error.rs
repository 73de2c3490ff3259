use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Model(#[from] spar_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: row {row}, column `{column}`: {message}", path.display())]
    Cell { path: PathBuf, row: usize, column: String, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        AppError::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Model(_) => "model",
            AppError::Io { .. } => "io",
            AppError::Cell { .. } => "data",
            AppError::Format { .. } => "format",
            AppError::Config(_) => "config",
            AppError::Usage(_) => "usage",
        }
    }

    /// `error kind=<tag> message="<text>"` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        format!("error kind={} message=\"{}\"", self.kind(), msg)
    }
}
