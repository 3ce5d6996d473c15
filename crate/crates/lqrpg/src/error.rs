use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum LqrError {
    #[error("fixed-point iteration did not reach residual {tol:e} within {max_iter} iterations (last residual {residual:e})")]
    NonConvergence {
        tol: f64,
        max_iter: usize,
        residual: f64,
    },

    #[error("inner matrix R + gamma * B^T P B is numerically singular")]
    SingularInnerMatrix,

    #[error("policy is not discounted-stable: gamma * rho^2 = {gamma_rho_sq} >= 1")]
    UnstablePolicy { gamma_rho_sq: f64 },

    #[error("matrix has spectral radius {rho} >= 1; Kreiss constant is infinite")]
    UnstableMatrix { rho: f64 },

    #[error("rollout cost exceeded blow-up ceiling {ceiling:e} at step {step}")]
    DivergenceDetected { step: usize, ceiling: f64 },

    #[error("sampled time index exceeded max_horizon {max_horizon} after {resamples} resamples")]
    Degenerate {
        max_horizon: usize,
        resamples: usize,
    },

    #[error("requested delta {requested:e} exceeds the schedule cap {cap:e}")]
    InfeasibleDelta { requested: f64, cap: f64 },

    #[error("backtracking line search bottomed out at step {step:e}")]
    StepTooLarge { step: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LqrError>;
