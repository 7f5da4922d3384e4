use otcloak_core::NodeId;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed node or edge record, with its 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Edge referencing a node that was never declared.
    #[error("dangling edge at line {line}: unknown node {node}")]
    DanglingEdge { line: usize, node: NodeId },

    #[error(transparent)]
    Core(#[from] otcloak_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
