use thiserror::Error;

use crate::graph::NodeId;

/// Error variants shared across the attack pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// The requested node does not exist in the graph.
    #[error("node {0} not found")]
    NodeNotFound(NodeId),

    /// An edit violated a domain constraint (incidence, self-loop, ...).
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// The queried node pair is not adjacent.
    #[error("node {0} is not a neighbor of {1}")]
    NotNeighbor(NodeId, NodeId),

    /// A node has no 1-hop neighbors, so no neighborhood measure exists.
    #[error("node {0} has an empty neighborhood")]
    EmptyNeighborhood(NodeId),

    /// Cost matrix contains a non-finite or negative entry.
    #[error("invalid cost: {0}")]
    InvalidCost(String),

    /// Marginal vector is not a valid simplex vector.
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    /// Solver produced a degenerate state it cannot recover from.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeError(String),

    /// Checkpoint file is corrupt or has the wrong version tag.
    #[error("format error: {0}")]
    FormatError(String),

    /// A nearest-neighbor pool was empty.
    #[error("empty pool: {0}")]
    EmptyPool(String),

    /// No eligible nodes to train on.
    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),

    /// A train split ended up with a single class.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    /// Generator or configuration parameters are out of range.
    #[error("invalid params: {0}")]
    InvalidParams(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
