use thiserror::Error;

/// Errors raised by the synthesis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Lyapunov operator is singular (closed loop has eigenvalues λ_i + λ_j = 0)")]
    SingularLyapunov,

    #[error("no disturbance-decoupling controller exists for the chosen subspace: {0}")]
    Infeasible(String),

    #[error("no stabilizing disturbance-decoupling controller found after {starts} starts (best spectral abscissa {best_abscissa:.3e})")]
    NoStabilizingDd { starts: usize, best_abscissa: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("unknown conic backend `{0}`")]
    UnknownBackend(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
