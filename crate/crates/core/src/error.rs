use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed WFDB input. `line` is 1-based for headers, `offset` a byte
    /// position for binary streams.
    #[error("parse error{}: {message}", location(*.line, *.offset))]
    Parse {
        message: String,
        line: Option<usize>,
        offset: Option<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("augmentation failed: {0}")]
    Augment(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("format error at byte {offset}: {message}")]
    Format { message: String, offset: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn location(line: Option<usize>, offset: Option<usize>) -> String {
    match (line, offset) {
        (Some(l), _) => format!(" at line {l}"),
        (None, Some(o)) => format!(" at byte {o}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            line: Some(line),
            offset: None,
        }
    }

    pub(crate) fn parse_offset(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            line: None,
            offset: Some(offset),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            message: message.into(),
            offset,
        }
    }
}
