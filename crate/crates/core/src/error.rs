use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown operator `{operator}` at {line}:{column}")]
    UnknownOperator {
        operator: String,
        line: usize,
        column: usize,
    },

    #[error("line {line}: `{name}` is already defined on line {first_line}")]
    DuplicateDefinition {
        name: String,
        line: usize,
        first_line: usize,
    },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("latent variable `{0}` has no indicators")]
    EmptyLatent(String),

    #[error("construct `{0}` has both a fixed loading and a fixed variance")]
    ScalingConflict(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{0} is singular")]
    Singular(String),

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
