use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("no unique solution: {0}")]
    NoUniqueSolution(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown region `{name}` at position {position}")]
    UnknownRegion { name: String, position: usize },
    #[error("formula outside the supported fragment at position {position}: {message}")]
    Fragment { position: usize, message: String },
    #[error("invalid interval [{a}, {b}] at position {position}")]
    Interval { a: f64, b: f64, position: usize },
    #[error("signal too short: need samples through t = {needed}, have through t = {available}")]
    InsufficientData { needed: f64, available: f64 },
    #[error("barrier `{formula}` is not positive at the initial state (value {value})")]
    InitialInfeasibility { formula: String, value: f64 },

    #[error("gradient undefined at {0}")]
    DegenerateGradient(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("controller error: {0}")]
    Controller(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("navigation QP infeasible after relaxation: {0}")]
    QpInfeasible(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }
}
