use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("ellipse fit failed: {0}")]
    Fit(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("no boundary detected")]
    NoBoundary,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn parse(offset: usize, detail: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(detail: impl Into<String>) -> Self {
        Error::Domain(detail.into())
    }

    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        Error::Shape(detail.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
