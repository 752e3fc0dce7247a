//! Front ends for `robust_search`: rule construction from loose parameters,
//! number formatting, advisor sessions and the HTTP service.

pub mod error;
pub mod format;
pub mod rule_spec;
pub mod service;
pub mod session;

pub use error::AppError;
