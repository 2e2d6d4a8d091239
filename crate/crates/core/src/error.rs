use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("edge ({u}, {v}) has an endpoint outside 0..{n}")]
    EdgeOutOfRange { u: usize, v: usize, n: usize },

    #[error("expected a square matrix, got {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("shape mismatch in {context}: {left_rows}×{left_cols} vs {right_rows}×{right_cols}")]
    ShapeMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("buffer of length {len} cannot hold a {rows}×{cols} matrix")]
    BadBufferLength { len: usize, rows: usize, cols: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("node {node} has class {class}, expected < {classes}")]
    ClassOutOfRange {
        node: usize,
        class: usize,
        classes: usize,
    },

    #[error("node index {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("teleport probability {0} outside [0, 1]")]
    InvalidAlpha(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("forward cache does not match the current parameters")]
    StaleCache,

    #[error("parameter set shapes differ from the optimizer state")]
    ParamShapeMismatch,

    #[error("no reachable unlabeled nodes to sample from")]
    EmptyUnlabeledPool,

    #[error("node {0} received no propagated label mass")]
    UnreachableNode(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("class {class} has no training nodes")]
    EmptyClass { class: usize },

    #[error("class {class} has {available} nodes, need {required}")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("split sets overlap at node {0}")]
    OverlappingSplit(usize),
}
