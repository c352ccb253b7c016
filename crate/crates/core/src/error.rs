use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// [`MooreError::kind`] gives the stable machine-readable name used on the
/// CLI's JSON error channel.
#[derive(Debug, Error)]
pub enum MooreError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("matrix is rank deficient: smallest singular value {smallest:e} vs largest {largest:e}")]
    RankDeficient { smallest: f64, largest: f64 },
    #[error("Householder chain length must be even, got {0}")]
    OddL(usize),
    #[error("Householder column {column} has norm {norm:e} below the floor")]
    NormFloor { column: usize, norm: f64 },
    #[error("task index {task} out of range for {count} tasks")]
    TaskIndexOutOfRange { task: usize, count: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("split provenance violation: {0}")]
    Provenance(String),
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("missing runs: {0}")]
    MissingRuns(String),
    #[error("missing baseline snapshot for {0}")]
    MissingBaseline(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MooreError {
    pub fn kind(&self) -> &'static str {
        match self {
            MooreError::Shape { .. } => "ShapeError",
            MooreError::RankDeficient { .. } => "RankDeficient",
            MooreError::OddL(_) => "OddL",
            MooreError::NormFloor { .. } => "NormFloor",
            MooreError::TaskIndexOutOfRange { .. } => "TaskIndexOutOfRange",
            MooreError::IndexOutOfRange { .. } => "IndexOutOfRange",
            MooreError::NoConvergence(_) => "NoConvergence",
            MooreError::NonFinite(_) => "NonFinite",
            MooreError::InvalidSpec(_) => "InvalidSpec",
            MooreError::Divergence { .. } => "Divergence",
            MooreError::Provenance(_) => "Provenance",
            MooreError::EmptySampleSet => "EmptySampleSet",
            MooreError::MissingRuns(_) => "MissingRuns",
            MooreError::MissingBaseline(_) => "MissingBaseline",
            MooreError::Format(_) => "FormatError",
            MooreError::Io(_) => "IoError",
            MooreError::Json(_) => "JsonError",
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        MooreError::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MooreError>;
