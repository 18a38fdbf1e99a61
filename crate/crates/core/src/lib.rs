//! Group-target tracking by belief propagation over preserved group
//! partitions.
//!
//! The crate is organized along the processing chain:
//! [`motion`] models, [`grouping`] hypotheses, [`association`] by loopy BP,
//! the particle [`filter`] recursion, the scenario simulator in [`sim`] and
//! the evaluation [`metrics`].

pub mod association;
pub mod error;
pub mod filter;
pub mod grouping;
pub mod metrics;
pub mod motion;
pub mod sim;

pub use error::{Error, Result};
pub use filter::{Filter, FilterConfig, StepReport};
pub use motion::KinematicState;
