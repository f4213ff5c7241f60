use thiserror::Error;

/// Errors produced by the library.
///
/// Infinite values of functionals are never errors; they are represented
/// by [`crate::ExtReal`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pi must be strictly positive (pi[{index}] = {value})")]
    NonPositivePi { index: usize, value: f64 },

    #[error("negative rate kappa[{i}][{j}] = {value}")]
    NegativeRate { i: usize, j: usize, value: f64 },

    #[error("detailed balance violated on edge ({i},{j}): theta_ij = {theta_ij}, theta_ji = {theta_ji}")]
    DetailedBalanceViolation {
        i: usize,
        j: usize,
        theta_ij: f64,
        theta_ji: f64,
    },

    #[error("time grids are not aligned: {0}")]
    GridMismatch(String),

    #[error("unsupported parameter: {0}")]
    UnsupportedParameter(String),

    #[error("alpha is not concave: {0}")]
    NonConcaveAlpha(String),

    #[error("continuity equation violated: residual {residual:e} > tolerance {tolerance:e}")]
    ContinuityEquationViolated { residual: f64, tolerance: f64 },

    #[error("step size underflow at t = {time} (h = {step:e}); state = {state:?}")]
    StepSizeUnderflow { time: f64, step: f64, state: Vec<f64> },

    #[error("non-finite field value at (u, v) = ({u}, {v})")]
    NonFiniteField { u: f64, v: f64 },

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("solver stalled after {iterations} iterations (KKT residual {residual:e}, best value {value})")]
    SolverStalled {
        iterations: usize,
        residual: f64,
        value: f64,
    },

    #[error("graph Laplacian is singular: components {components:?}")]
    SingularLaplacian { components: Vec<Vec<usize>> },

    #[error("graph is disconnected: components {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
