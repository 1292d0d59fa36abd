use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("node does not belong to this graph")]
    ForeignNode,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("indicator assignment has {got} bits, document has {expected} tokens")]
    AssignmentLength { expected: usize, got: usize },

    #[error(
        "{free} free indicator positions exceed the exact-enumeration limit of {limit}; \
         use a block bootstrap strategy (nonoverlap:<l> or local) instead"
    )]
    TooManyFreePositions { free: usize, limit: usize },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("text contains no tokens")]
    NoTokens,

    #[error("{path}: {malformed} of {total} embedding lines are malformed")]
    MalformedEmbeddings {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
