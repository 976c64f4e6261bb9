use thiserror::Error;

/// Errors produced by the variational engine.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Bloch vector ({x}, {y}, {z}): length {norm} exceeds 1")]
    InvalidState { x: f64, y: f64, z: f64, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("support mismatch: {0}")]
    Support(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("optimizer did not converge: {0}")]
    Convergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no sign change in bracket [{lo}, {hi}]: {detail}")]
    NoBracket { lo: f64, hi: f64, detail: String },

    #[error("finite-difference inconsistency: {0}")]
    FiniteDifference(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence(_)
                | Error::Degenerate(_)
                | Error::NoBracket { .. }
                | Error::FiniteDifference(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
