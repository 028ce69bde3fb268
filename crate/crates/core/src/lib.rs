//! Fully-dynamic, cash non-additive risk measures on finite filtered
//! probability models.

pub mod axioms;
pub mod bsde;
pub mod duality;
pub mod error;
pub mod measures;
pub mod probspace;
pub mod qcalculus;
pub mod schedule;
pub mod shortfall;
pub mod utility;

pub use error::{Result, RiskError};
pub use probspace::{AdaptedProcess, BrownianLattice, RandomVariable, ScenarioTree};
