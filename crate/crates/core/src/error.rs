use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The equality constraints have empty intersection with the simplex.
    #[error("equality constraints are infeasible on the simplex (violation {gap:.3e})")]
    Infeasible { gap: f64 },

    /// The solver exhausted its iteration budget before certifying optimality.
    #[error("solver stopped after {iterations} iterations with KKT residual {kkt_residual:.3e}")]
    NonConvergence { iterations: usize, kkt_residual: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    /// Too many replications of a Monte Carlo cell failed.
    #[error("cell failed: {failed} of {total} replications errored")]
    CellFailed { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
