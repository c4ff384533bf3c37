use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A query point falls outside the spatial or temporal extent of a surface.
    #[error("extrapolation: t={t}, s={s} is outside the grid domain")]
    Extrapolation { t: f64, s: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("tridiagonal solve broke down at time row {time_row}: {reason}")]
    LinearSolve { time_row: usize, reason: String },

    #[error("Newton iteration failed at time row {time_row}: max residual {max_residual:e} after {iterations} iterations")]
    NewtonDivergence {
        time_row: usize,
        max_residual: f64,
        iterations: usize,
    },

    #[error("PSOR did not converge at time row {time_row} within {sweeps} sweeps (last change {last_change:e})")]
    PsorDivergence {
        time_row: usize,
        sweeps: usize,
        last_change: f64,
    },

    /// A solved surface left [0, K] by more than round-off.
    #[error("solution bound violated at row {time_row}, node {node}: value {value}")]
    BoundViolation {
        time_row: usize,
        node: usize,
        value: f64,
    },

    #[error("solve failed for theta={theta}: {source}")]
    Sweep {
        theta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("config error: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
