use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {0:?} is not numeric")]
    NotNumeric(String),
    #[error("column {0:?} is not a factor")]
    NotFactor(String),
    #[error("column {name:?} has {got} rows, table has {want}")]
    LengthMismatch {
        name: String,
        got: usize,
        want: usize,
    },
    #[error("design is rank deficient; aliased columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("need more rows than columns: n={n}, k={k}")]
    TooFewRows { n: usize, k: usize },
    #[error("outcome must be 0/1 for logistic fits; found {0}")]
    NotBinary(f64),
    #[error("logistic fit failed to converge after {iterations} iterations (max step {max_delta:.3e}, firth={firth})")]
    NoConvergence {
        iterations: usize,
        max_delta: f64,
        firth: bool,
    },
    #[error("all coefficients are zero; importance undefined")]
    ZeroCoefficients,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;
