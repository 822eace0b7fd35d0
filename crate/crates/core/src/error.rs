use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Lyapunov assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid grid specification: {0}")]
    InvalidSpec(String),
    #[error("node index ({i}, {j}, {k}) out of range for a {ni}x{nj}x{nk} grid")]
    OutOfRange {
        i: usize,
        j: usize,
        k: usize,
        ni: usize,
        nj: usize,
        nk: usize,
    },
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: u64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("negative band radius {0}")]
    NegativeBand(f64),
    #[error("mollifier width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("observable is not supported here: {0}")]
    UnsupportedObservable(String),
    #[error("GMRES did not converge: {iterations} iterations, relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("incomplete factorization broke down at row {row}")]
    PreconditionerBreakdown { row: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate difference: {0}")]
    DegenerateDifference(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
