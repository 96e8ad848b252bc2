use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hurst parameter {0} outside (0, 1)")]
    InvalidHurst(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("Cholesky factorization failed at pivot {pivot} (pivot value {value:e})")]
    CholeskyFailure { pivot: usize, value: f64 },

    #[error("negative circulant eigenvalue {value:e} at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("flow integrator exceeded {max_steps} steps; escaped at u = {u}, y = {y}")]
    FlowStepOverflow { u: f64, y: f64, max_steps: usize },

    #[error("diffusion coefficient undefined at x = {0} (sigma^2 < 0)")]
    SigmaDomain(f64),

    #[error("implicit step {step} not invertible (increment {increment:e})")]
    StepNotInvertible { step: usize, increment: f64 },

    #[error("Newton iteration and bisection fallback failed at step {step}")]
    NewtonDivergence { step: usize },

    #[error("index order violation: s = {s} > t = {t}")]
    IndexOrder { s: usize, t: usize },

    #[error("incompatible configuration: {0}")]
    Config(String),

    #[error("{failed} of {total} paths failed (first failure: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("sigma_H calibration inconclusive: {0}")]
    CalibrationInconclusive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::CholeskyFailure { .. }
                | Error::NegativeEigenvalue { .. }
                | Error::FlowStepOverflow { .. }
                | Error::SigmaDomain(_)
                | Error::StepNotInvertible { .. }
                | Error::NewtonDivergence { .. }
                | Error::TooManyFailures { .. }
                | Error::CalibrationInconclusive(_)
        )
    }
}
