use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular point: kernel evaluated on the diagonal v = w")]
    SingularPoint,

    #[error("calibration failed: relative spread {spread:.3e} exceeds {limit:.1e}")]
    Calibration { spread: f64, limit: f64 },

    #[error("quadrature did not converge (residual {residual:.3e})")]
    Quadrature { residual: f64 },

    #[error("majorant violated: realized rate {realized:.6} above bound {bound:.6}")]
    MajorantViolation { realized: f64, bound: f64 },

    #[error("time step too large: {events:.3} expected events per particle per step (ceiling {ceiling})")]
    StepTooLarge { events: f64, ceiling: f64 },

    #[error("non-finite velocity in particle {index} at t = {time}")]
    NonFinite { index: usize, time: f64 },

    #[error("empty or zero-mass density")]
    ZeroMass,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
