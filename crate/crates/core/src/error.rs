use thiserror::Error;

/// Errors raised by basis construction, assembly, time stepping and the
/// experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("derivative order {order} exceeds spline degree {degree}")]
    DerivativeOrder { order: usize, degree: usize },

    #[error("no relevant b-splines: the weight is not positive at any sample point")]
    EmptyBasis,

    #[error("mass matrix diagonal is not positive at relevant index ({0}, {1})")]
    DegenerateMass(i64, i64),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("iteration limit {iterations} reached with relative residual {residual:e}")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("Newton iteration stalled after {iterations} iterations, residual {residual:e}")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
