use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrand is not finite at node {index}")]
    NonFiniteIntegrand { index: usize },

    #[error("internal numerical error: {0}")]
    Internal(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    DivergedTraining { epoch: usize },

    #[error("generation diverged: non-finite state at step {step}")]
    GenerationDiverged { step: usize },

    #[error("ellipticity violated: conductivity {value} at ({x}, {y})")]
    EllipticityViolation { x: f64, y: f64, value: f64 },

    #[error("saddle-point solve failed: relative residual {residual:e}")]
    SolverFailure { residual: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::Parse(_) | Error::Io(_))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
