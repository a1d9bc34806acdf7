use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("degenerate embedding: row {row} has norm {norm:e}, below {eps:e}")]
    DegenerateRow { row: usize, norm: f64, eps: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("contrastive loss needs at least two modalities, got {0}")]
    ModalityCount(usize),

    #[error("evaluation on empty input")]
    EmptyEval,

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("non-finite {term} at epoch {epoch}")]
    NonFinite { epoch: usize, term: String },

    #[error("{}:{line}: {msg}", path.display())]
    Ingest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op,
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
