use thiserror::Error;

/// Errors raised by graph parsing, numerics setup and inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no edges")]
    NoEdges,

    #[error("line {line}: self-loop on node `{node}` rejected")]
    SelfLoop { line: usize, node: String },

    #[error("line {line}: expected 2 node identifiers, found {found}")]
    Malformed { line: usize, found: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate message on edge {from} -> {to}: unnormalized belief is identically zero")]
    DegenerateMessage { from: usize, to: usize },

    #[error("degenerate pair marginal on edge ({u}, {v}): zero normalizer")]
    DegeneratePair { u: usize, v: usize },

    #[error("oracle refused: {0}")]
    OracleSize(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
