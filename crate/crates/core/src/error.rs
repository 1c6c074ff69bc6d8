use thiserror::Error;

/// Errors raised by the numeric core, the data pipeline and the trainer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },
    #[error("batch normalization in train mode needs at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("matrix is rank deficient: expected rank {expected}, detected rank {detected}")]
    RankDeficient { expected: usize, detected: usize },
    #[error("row count {rows} exceeds right-hand side width {cols}; set allow_wide to solve anyway")]
    TooManyEquations { rows: usize, cols: usize },
    #[error("decomposition of dims {dims:?} requires N ≥ {required} components, got {got}")]
    Cardinality {
        dims: Vec<usize>,
        required: usize,
        got: usize,
    },
    #[error("node error: {0}")]
    Nodes(String),
    #[error("perturbation scan exhausted after {attempts} candidates; best rank {best_rank} of {target}")]
    ProbeFailure {
        attempts: usize,
        best_rank: usize,
        target: usize,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("inconsistent data: {0}")]
    Consistency(String),
    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss:e}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            reason: err.to_string(),
        }
    }
}
