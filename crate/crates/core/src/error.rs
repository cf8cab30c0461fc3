use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate residue {residue} in frame {frame}: N, CA and C are collinear")]
    DegenerateResidue { frame: usize, residue: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::Structure(_) => "structure",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::DegenerateResidue { .. } => "degenerate_residue",
            Error::Domain(_) => "domain",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a frame index to errors raised while processing one frame.
    pub(crate) fn in_frame(self, frame: usize) -> Self {
        match self {
            Error::DegenerateGeometry(m) => Error::DegenerateGeometry(format!("frame {frame}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("frame {frame}: {m}")),
            Error::Domain(m) => Error::Domain(format!("frame {frame}: {m}")),
            other => other,
        }
    }
}
