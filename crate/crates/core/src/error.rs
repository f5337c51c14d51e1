use std::path::PathBuf;

use thiserror::Error;

use crate::data::EntitySpan;

/// Shape disagreement between tensor operands.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch in {op}: {left:?} vs {right:?}")]
pub struct ShapeError {
    pub op: &'static str,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sentence {sentence}: {message}")]
    Validation { sentence: usize, message: String },

    #[error("crossing or conflicting annotation: {first:?} and {second:?}")]
    Annotation {
        first: EntitySpan,
        second: EntitySpan,
    },

    #[error("cannot encode overlapping spans {first:?} and {second:?}")]
    Encoding {
        first: EntitySpan,
        second: EntitySpan,
    },

    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("label index {index} out of range for {size} labels")]
    Index { index: usize, size: usize },

    #[error("gold and predicted corpora differ in length: {gold} vs {pred}")]
    Alignment { gold: usize, pred: usize },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("label inventory mismatch: expected {expected:?}, found {found:?}")]
    LabelMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
