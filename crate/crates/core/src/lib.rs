//! Position-bias estimation for grid-layout search results from logged clicks
//! and relevance-judge scores, with the simulation, ranking and evaluation
//! tooling around it.

pub mod click_model;
pub mod error;
pub mod estimator;
pub mod evaluator;
pub mod exec;
pub mod judge;
pub mod ltr;
pub mod rng;
pub mod simulator;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;
