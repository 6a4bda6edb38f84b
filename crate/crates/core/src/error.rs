use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid epsilon: {0}")]
    InvalidEpsilon(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported functional: {0}")]
    UnsupportedFunctional(String),
    #[error("inner minimization did not converge after {iterations} iterations (residual {residual:.3e})")]
    InnerNonconvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },
    #[error("fixed-point iteration did not converge after {} outer iterations", history.len())]
    OuterNonconvergence {
        /// Fixed-point residual after each outer iteration.
        history: Vec<f64>,
        last_iterate: Vec<f64>,
    },
    #[error("truncation radius {radius:.6e} is exceeded by the solution (max |u| = {max_abs:.6e})")]
    TruncationViolated { radius: f64, max_abs: f64 },
    #[error("time step {step} failed: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("parameters violate the regime hypotheses: {}", .0.join("; "))]
    InvalidRegime(Vec<String>),
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error("incompatible discretizations: {0}")]
    Incompatible(String),
    #[error("{0} is out of range")]
    OutOfRange(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures raised by the nonlinear solvers (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::InnerNonconvergence { .. }
                | Error::OuterNonconvergence { .. }
                | Error::TruncationViolated { .. }
                | Error::StepFailure { .. }
        )
    }

    /// True for errors in the experiment description rather than in its execution.
    pub fn is_config_error(&self) -> bool {
        !self.is_solver_failure() && !matches!(self, Error::Io { .. })
    }
}
