use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid edge weight on ({i}, {j}): {reason}")]
    InvalidWeight { i: usize, j: usize, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("agent {agent} out of range for a network of {n} agents")]
    InvalidAgent { agent: usize, n: usize },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid step index {0}: periodic weights start at k = 1")]
    InvalidStep(u64),

    #[error("configuration error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numerical error at step {step}: {reason}")]
    Numerical { step: u64, reason: String },

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("privacy violation at step {step}, {field}: residual {residual:e}")]
    PrivacyViolation {
        step: u64,
        field: String,
        residual: f64,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
