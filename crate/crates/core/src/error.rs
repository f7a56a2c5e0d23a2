use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate sample: all pairwise distances are zero")]
    DegenerateSample,

    #[error("indistinguishable embedded means (T^2 = {0:e})")]
    IndistinguishableMeans(f64),

    #[error("{0} direction is undefined: its RKHS norm vanishes")]
    DegenerateDirection(&'static str),

    #[error("singular linear system; use a positive regularizer lambda")]
    SingularSystem,

    #[error("SVM solver did not converge after {iterations} iterations (KKT gap {gap:e})")]
    SvmNotConverged { iterations: usize, gap: f64 },

    #[error("degenerate projected distribution: zero variance in group {0}")]
    DegenerateDistribution(&'static str),

    #[error("empty group {0}")]
    EmptyGroup(&'static str),

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("bootstrap failed: {failures} failed attempts, last error: {last}")]
    BootstrapExhausted { failures: usize, last: Box<Error> },

    #[error("fold too small: {0}")]
    FoldTooSmall(String),
}

pub type Result<T> = std::result::Result<T, Error>;
