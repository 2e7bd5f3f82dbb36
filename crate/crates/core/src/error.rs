use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Gamma pole: argument {arg} of {expr} is within 1e-9 of a non-positive integer")]
    Pole { expr: String, arg: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("cost guard tripped: {0}")]
    Cost(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature did not converge: {0}")]
    Convergence(String),

    #[error("blow-up at t = {t}: {reason}")]
    Blowup { t: f64, reason: String },

    #[error("degenerate field: {0}")]
    Degenerate(String),

    #[error("malformed file {path}: {reason}")]
    FileFormat { path: String, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
