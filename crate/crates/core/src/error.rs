use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("expected {expected:?} matrix, got {found} entries")]
    ShapeMismatch { expected: (usize, usize), found: usize },
    #[error("operator norm of an empty matrix")]
    Empty,
    #[error("power iteration did not converge within {iterations} iterations")]
    ConvergenceFailure { iterations: usize },
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    InvalidSpec(String),
    #[error("token {token} at position {position} is outside the vocabulary of size {vocab}")]
    InvalidToken { position: usize, token: usize, vocab: usize },
    #[error("sequence has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("suffix {index} has length {found}, expected {expected}")]
    SuffixLengthMismatch { index: usize, expected: usize, found: usize },
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {message}")]
    CsvRow { row: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("prefix classes {a:?} and {b:?} map to sequence embeddings {distance:e} apart")]
    ClusterCollision { a: Vec<usize>, b: Vec<usize>, distance: f64 },
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Error)]
pub enum GradientError {
    #[error("batch is empty")]
    EmptyDataset,
    #[error("sample {sample}: sequence embedding norm {norm:e} is too small for the closed-form blocks")]
    DegenerateXi { sample: usize, norm: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("closed-form blocks need the standard normalization")]
    UnsupportedNorm,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot expand vocabulary from {old} to {new}")]
    InvalidExpansion { old: usize, new: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error("epoch {epoch}: gradient norm {grad_norm:e} exceeds bound {bound:e}")]
    BoundViolation { epoch: usize, grad_norm: f64, bound: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("need at least {needed} metric rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run log schema {found:?} is not supported (expected {expected:?})")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("line {line}: {message}")]
    CorruptLine { line: usize, message: String },
    #[error("run log has no header line")]
    MissingHeader,
    #[error("snapshot epoch {epoch} does not follow epoch {last}")]
    NonIncreasingEpoch { last: usize, epoch: usize },
    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
