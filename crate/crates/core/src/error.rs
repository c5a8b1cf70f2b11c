use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Argument outside the domain of a functional (e.g. nonpositive under KL).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate pair: {0}")]
    DegeneratePair(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no implied volatility: price {price} violates the {bound} bound {limit}")]
    NoSolution {
        price: f64,
        bound: &'static str,
        limit: f64,
    },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
