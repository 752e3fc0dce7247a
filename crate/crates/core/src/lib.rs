//! Robust stopping rules for discounted sequential search with recall.
//!
//! A searcher holding a best-so-far alternative `y` decides each round
//! whether to stop or draw again from an unknown distribution. Rules here are
//! stationary: the stopping probability depends on `y` only. Their quality is
//! the worst-case fraction of the optimal payoff they secure.

pub mod calibrate;
pub mod derive;
pub mod error;
pub mod model;
pub mod par;
pub mod rules;
pub mod simulator;
pub mod verifier;

pub use error::{Error, Result};
pub use model::{CostModel, Environment, Lottery, SearchState};
pub use par::Exec;
pub use rules::StoppingRule;
