use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input has the wrong structure: non-square, asymmetric, mismatched shapes.
    #[error("structural error: {0}")]
    Structural(String),

    /// A scalar or index argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The dense eigensolver refuses graphs above the configured node cap.
    #[error("graph has {n} nodes, above the dense eigendecomposition cap of {cap}; subsample the graph first")]
    Capacity { n: usize, cap: usize },

    /// Non-finite values or divergent iterations.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was called in a state that does not permit it.
    #[error("state error: {0}")]
    State(String),

    /// Evaluation protocol cannot be applied to the given inputs.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("header mismatch in {}: {detail}", .path.display())]
    HeaderMismatch { path: PathBuf, detail: String },

    #[error("index out of range in {}: {detail}", .path.display())]
    IndexOutOfRange { path: PathBuf, detail: String },

    #[error("malformed file {}: {detail}", .path.display())]
    Malformed { path: PathBuf, detail: String },

    #[error("import of {} failed: {detail}", .path.display())]
    Import { path: PathBuf, detail: String },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by data on disk (missing, corrupt or inconsistent files).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::HeaderMismatch { .. }
                | Error::IndexOutOfRange { .. }
                | Error::Malformed { .. }
                | Error::Import { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Structural(_)
                | Error::Protocol(_)
                | Error::Capacity { .. }
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
