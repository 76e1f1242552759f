use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// Text input (TLE, stack file, CSV, config) could not be decoded.
    #[error("{what}: line {line}, column {column}: {message}")]
    Parse { what: String, line: usize, column: usize, message: String },

    /// An iterative solver failed to reach its tolerance.
    #[error("numeric failure: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    /// A request falls outside the validity range of a model.
    #[error("out of range: {0}")]
    Range(String),

    /// Counting statistics cannot support the requested estimate.
    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn parse(what: impl Into<String>, line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse { what: what.into(), line, column, message: message.into() }
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be finite, got {value}")))
    }
}
