//! Doubly robust estimation of a continuous dose-response curve
//! `theta(a) = E[Y^a]` when the primary outcome is missing for part of the
//! sample and surrogate outcomes are observed for everyone.

pub mod data;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod nuisance;
pub mod simulation;
pub mod smoother;

pub use error::{Error, Result};
