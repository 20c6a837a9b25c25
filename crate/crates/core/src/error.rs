use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or support fell outside the discretized box.
    #[error("domain error: {0}")]
    Domain(String),
    /// An argument violated an operation's precondition.
    #[error("argument error: {0}")]
    Argument(String),
    /// A configured resource cap was exceeded.
    #[error("resource error: {0}")]
    Resource(String),
    /// A numerical routine failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Two independent evaluation routes disagreed beyond tolerance.
    #[error("consistency error: {0}")]
    Consistency(String),
    /// A run or square-function configuration is unusable.
    #[error("configuration error: {0}")]
    Config(String),
    /// No constant on a search ladder validated.
    #[error("fit failure: {0}")]
    Fit(String),
    /// A report contained a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
