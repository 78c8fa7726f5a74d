use thiserror::Error;

/// Errors raised by the numerical and sampling routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: estimate {estimate}, residual {residual}")]
    Quadrature { estimate: f64, residual: f64 },

    #[error("ODE step size underflow at t = {last_time} (last valid value {last_value})")]
    StepUnderflow { last_time: f64, last_value: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("population overflow at step {step}")]
    Overflow { step: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors that stem from invalid input rather than a numerical failure.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Unsupported(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
