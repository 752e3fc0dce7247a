use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] robust_search::Error),
    #[error("{0}")]
    Input(String),
    #[error("unknown session {0}")]
    NotFound(String),
    /// Offer index does not continue the session log.
    #[error("{0}")]
    Conflict(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl AppError {
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Core(e) => e.kind(),
            AppError::Input(_) => "input",
            AppError::NotFound(_) => "not_found",
            AppError::Conflict(_) => "conflict",
            AppError::Io(_) => "io",
        }
    }

    /// One-line JSON form used on stderr and in HTTP bodies.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.to_string(), "kind": self.kind() })
    }
}

pub type AppResult<T> = Result<T, AppError>;
