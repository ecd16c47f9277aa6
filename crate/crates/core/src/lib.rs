//! Cooperative mission planning for energy-constrained UAV-UGV teams.
//!
//! The crate is organised around a deterministic mission environment
//! ([`env`]). Two families of planners produce routes for it: a bilevel
//! heuristic ([`bilevel`]) that places refuelling stops and then solves
//! per-leg routing problems, and an attention policy ([`policy`]) trained
//! with policy gradients ([`training`]). [`eval`] scores planners against
//! each other and drives mid-mission replanning.

pub mod error;
pub mod eval;
pub mod autodiff;
pub mod bilevel;
pub mod policy;
pub mod env;
pub mod io;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
