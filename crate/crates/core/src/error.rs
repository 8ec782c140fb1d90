use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("frame {index}: {msg}")]
    Frame { index: u64, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimensions(String),

    #[error("{file} line {line}: {msg}")]
    Parse {
        file: &'static str,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scene script: {0}")]
    Script(String),

    #[error("background model: {0}")]
    Background(String),

    #[error("timestamp went backwards at frame {index} ({prev_ms} ms -> {ts_ms} ms)")]
    NonMonotoneTimestamp { index: u64, prev_ms: u64, ts_ms: u64 },

    #[error("detector: {0}")]
    Detector(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("analytics: {0}")]
    Analytics(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file,
            line,
            msg: msg.into(),
        }
    }
}
