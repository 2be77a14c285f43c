use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("inconsistent counts: {0}")]
    InconsistentCounts(String),

    #[error("label out of range: node {node} has label {label}, but C={num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-positive temperature {0}")]
    NonPositiveTemperature(f64),

    #[error("segment ids are not sorted non-decreasing at position {0}")]
    UnsortedSegments(usize),

    #[error("node {0} has an empty aggregation set")]
    EmptyNeighborhood(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("empty mask")]
    EmptyMask,

    #[error("graph has no edges")]
    NoEdges,

    #[error("degenerate variance in SNR estimate: {0}")]
    DegenerateVariance(String),

    #[error("backward called on a non-scalar tensor of shape {0:?}")]
    NonScalarBackward(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, Error>;
