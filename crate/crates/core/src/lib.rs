//! Locally differentially private measurement of the performance gap of a
//! model across two demographic groups.
//!
//! * [`mechanisms`]: client-side randomizers and their privacy audits.
//! * [`estimation`]: unbiased group-mean and gap estimators.
//! * [`analytics`]: closed-form MSE, budget allocation and minimum budgets.
//! * [`simulation`]: population generation and Monte-Carlo experiments.
//! * [`io`]: CSV formats for records and seed observations.

pub mod analytics;
pub mod error;
pub mod estimation;
pub mod io;
pub mod mechanisms;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
