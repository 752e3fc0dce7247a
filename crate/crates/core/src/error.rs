use thiserror::Error;

/// Failure modes shared by every operation in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Cost parameters outside the admissible region.
    #[error("configuration: {0}")]
    Config(String),
    /// Malformed input: bad probabilities, negative values, nonmonotone rules.
    #[error("validation: {0}")]
    Validation(String),
    /// Well-formed input the requested routine does not handle.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Unsupported(_) => "unsupported",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be finite, got {v}")))
    }
}

pub(crate) fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must lie in [0, 1], got {v}")))
    }
}
