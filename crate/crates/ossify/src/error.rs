//! Crate-wide error type.
//!
//! Errors split into two broad families: *validation* errors (bad arguments,
//! malformed files, violated preconditions — the caller handed us something
//! unusable) and *runtime* errors (I/O failures, numerical divergence).  The
//! CLI maps the former to exit code 2 and everything else to exit code 1, so
//! each variant declares which family it belongs to via [`Error::is_validation`].

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs that must share a grid (dims and spacing) do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file failed structural validation (bad magic, truncated payload,
    /// inconsistent header fields, out-of-range labels, non-finite data).
    #[error("malformed file{}: {msg}", path_suffix(.path))]
    Format { path: Option<PathBuf>, msg: String },

    /// An operation that needs above-threshold content found none.
    #[error("no bone content: {0}")]
    NoBoneContent(String),

    /// Optimizer produced a non-finite loss.
    #[error("registration diverged: {0}")]
    Diverged(String),

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name and the input that was being processed.
    #[error("pipeline stage '{stage}' failed on {input}: {source}")]
    Stage {
        stage: String,
        input: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error{}: {source}", path_suffix(.path))]
    Io {
        path: Option<PathBuf>,
        #[source]
        source: std::io::Error,
    },
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" ({})", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: Some(path.into()), source }
    }

    pub fn format(path: Option<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path, msg: msg.into() }
    }

    /// True for errors caused by unusable input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::GridMismatch(_)
            | Error::InvalidArgument(_)
            | Error::Format { .. }
            | Error::NoBoneContent(_) => true,
            Error::Diverged(_) | Error::Io { .. } => false,
            Error::Stage { source, .. } => source.is_validation(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io { path: None, source: e }
    }
}
