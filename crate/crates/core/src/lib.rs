//! Embedded feature selection for linear SVMs under a hard cardinality
//! constraint: exact mixed-integer formulations, decomposed second-order-cone
//! relaxations, upper-bounding heuristics, big-M tightening and an exact
//! procedure built on semi-relaxed mixed-integer conic subproblems, all on
//! top of an in-repo interior-point core and branch-and-bound engine.

pub mod conicqp;
pub mod dataio;
pub mod domain;
mod error;
pub mod heuristics;
pub mod mip;
pub mod relaxations;
pub mod svm;

pub use error::{Error, Result};
