//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("agent {agent} has coordinate ({x:.3}, {y:.3}) outside the raster bounds")]
    OutOfBounds { agent: u64, x: f64, y: f64 },

    #[error("no traversable path between ({0:.2}, {1:.2}) and ({2:.2}, {3:.2})")]
    NoPath(f64, f64, f64, f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("non-finite gradient in parameter `{0}`")]
    NanGradient(String),

    #[error("stale tape: parameters were updated after the forward pass")]
    StaleTape,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
