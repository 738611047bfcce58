use thiserror::Error;

use crate::models::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no unique eigenvalue: graph is not strongly connected or has no circuit")]
    NoUniqueEigenvalue,

    /// Power iteration hit its step cap before the state became periodic.
    #[error("no periodic regime after {steps} steps (best growth-rate estimate {mu_estimate})")]
    NoPeriodicity { steps: usize, mu_estimate: f64 },

    #[error("invalid ring: n={n}, m={m} (need 1 <= n <= m)")]
    InvalidRing { n: usize, m: usize },

    #[error("density {0} outside (0, 1]")]
    InvalidDensity(f64),

    #[error("invalid model: {}", summarize(.0))]
    InvalidModel(Vec<Violation>),

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("trajectory has {available} steps, need more than {burn_in}")]
    InsufficientSteps { available: usize, burn_in: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid measurements: {0}")]
    InvalidMeasurement(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}
