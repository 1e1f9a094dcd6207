use std::path::PathBuf;

use diffcore::DiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid ontology: {0}")]
    Ontology(String),

    #[error("invalid scene graph: {0}")]
    Graph(String),

    #[error("unknown concept {0:?}")]
    UnknownConcept(String),

    #[error("language-model backend failed on prompt {prompt:?}: {message}")]
    Backend { prompt: String, message: String },

    #[error("ontology construction failed for {concept:?}: {message}")]
    Construction { concept: String, message: String },

    #[error("no active axioms: {0}")]
    NoActiveAxioms(String),

    #[error("training aborted at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Self::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
