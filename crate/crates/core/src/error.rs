use thiserror::Error;

use crate::embedding::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("id `{0}` was already queried")]
    RepeatedQuery(String),

    #[error("scores contain only one class ({0})")]
    SingleClass(&'static str),

    #[error("label {0} is outside the class vocabulary")]
    LabelOutsideVocabulary(Label),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
