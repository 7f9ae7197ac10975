use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty measure: a prior needs atoms or a density")]
    EmptyMeasure,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("non-finite or out-of-range argument: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("q is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
    #[error("lambda * upsilon = {0} must be < 1")]
    NonContractive(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
