use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data for three folds (n = {0})")]
    InsufficientData(usize),

    #[error("empty index set")]
    EmptyMeasure,

    #[error("score value {0} outside [-1, 1]")]
    Domain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("positivity violated: propensity {0} not strictly inside (0, 1)")]
    Positivity(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what} did not converge (gradient norm {grad_norm:e})")]
    NoConvergence { what: &'static str, grad_norm: f64 },

    #[error("degenerate (constant) column `{0}`")]
    DegenerateColumn(String),

    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },

    #[error("targeting iteration {k}: {source}")]
    Iteration { k: usize, source: Box<Error> },

    #[error("every grid cell failed; first failure: {0}")]
    AllCellsFailed(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
