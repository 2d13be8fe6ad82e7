use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range ({len}) in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate edge between user {user} and item {item}")]
    DuplicateEdge { user: usize, item: usize },
    #[error("{edges} edges cannot fill {steps} steps")]
    TooFewEdges { edges: usize, steps: usize },
    #[error("split leaves an empty part (train {train}, val {val}, test {test})")]
    DegenerateSplit { train: usize, val: usize, test: usize },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
}
