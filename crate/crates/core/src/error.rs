use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// The variants split into user-facing problems (bad input, bad arguments)
/// and numeric failures; [`AtlasError::is_numeric`] lets front ends map them
/// to distinct exit codes.
#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("tensor is empty: {0}")]
    EmptyTensor(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AtlasError>,
    },
}

impl AtlasError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AtlasError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        AtlasError::Parse {
            line,
            message: message.into(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        AtlasError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn is_numeric(&self) -> bool {
        match self {
            AtlasError::Numeric(_) => true,
            AtlasError::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, AtlasError>;
