use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} re-declared with type {new} (was {existing})")]
    TypeConflict {
        node: String,
        existing: String,
        new: String,
    },
    #[error("format error at line {line}: {msg}")]
    FormatError { line: usize, msg: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown {kind} type {name}")]
    UnknownType { kind: &'static str, name: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged: loss became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("no benign training sample of class {0}")]
    EmptyClass(usize),
    #[error("cannot remove {requested} edges of type slot {slot}: only {available} exist")]
    NegativeCount {
        slot: usize,
        requested: u32,
        available: u32,
    },
    #[error("need at least {needed} graphs, got {got}")]
    InsufficientGraphs { needed: usize, got: usize },
    #[error("model file is invalid: {0}")]
    InvalidModel(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
