use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("derivative of order {requested} requested but potential supports at most {max_order}")]
    OrderExceeded { requested: usize, max_order: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("integration failed at tau = {tau}: step size underflow (estimated blow-up near tau = {blowup})")]
    StepUnderflow { tau: f64, blowup: f64 },

    #[error("shooting did not converge after {iterations} iterations (terminal error {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate Jacobian: |det dq(t)/dv0| = {det:e} below threshold {threshold:e} (conjugate point?)")]
    DegenerateJacobian { det: f64, threshold: f64 },

    #[error("conjugate point too close to the endpoint (tau = {tau}, t = {duration})")]
    DegenerateEndpoint { tau: f64, duration: f64 },

    #[error("quadrature not converged: estimate {estimate:e} vs refined {refined:e}")]
    QuadratureNotConverged { estimate: f64, refined: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stationary point not found: {0}")]
    StationaryPointNotFound(String),
}

pub type Result<T> = std::result::Result<T, Error>;
