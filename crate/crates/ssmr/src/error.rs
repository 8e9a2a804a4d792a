use thiserror::Error;

/// Failure modes surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate fit in subgroup {subgroup}: {detail}")]
    Degenerate { subgroup: usize, detail: String },
    #[error("covariance for subgroup {subgroup} is singular ({detail}); supply an informative H for this subgroup")]
    SingularSigma { subgroup: usize, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("limit exceeded: {0}")]
    Limit(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Dimension(_) | Error::Io { .. } => 2,
            Error::Degenerate { .. } | Error::SingularSigma { .. } | Error::Numerical(_) => 3,
            Error::Limit(_) => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
