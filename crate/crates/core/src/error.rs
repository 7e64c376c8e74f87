use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("calibration incomplete: {0}")]
    CalibrationIncomplete(String),

    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("no points inside the {k} m volume around the click")]
    EmptyPatch { k: f64 },

    #[error("scene spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered in {0}")]
    NumericOverflow(String),

    #[error("instance too sparse: {0}")]
    InstanceTooSparse(String),

    #[error("click lies inside no ground-truth box of category {0}")]
    LabelAmbiguity(String),

    #[error("empty instance: {0}")]
    EmptyInstance(String),

    #[error("no point above the foreground threshold (max confidence {max_confidence:.4})")]
    BelowThreshold { max_confidence: f64 },

    #[error("training diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid state transition: {0}")]
    State(String),

    #[error("pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("incomplete batch: {0}")]
    IncompleteBatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
