//! Synchronization analysis for hub-and-spoke AC networks governed by the
//! reduced swing equations.
//!
//! Generator 1 is the hub, generators 2..=n are spokes coupled only to the
//! hub. Phases are measured relative to generator n.

pub mod bifurcation;
pub mod cli;
pub mod dynamics;
pub mod equilibrium;
pub mod grid;
pub mod output;
pub mod scenarios;
pub mod stability;

pub use dynamics::{integrate, vector_field, IntegratorSettings, Outcome, Trajectory};
pub use equilibrium::{enumerate_fixed_points, sync_frequency, EquilibriumSet};
pub use grid::{GridSpec, SystemState};
pub use stability::{check_criterion, classify_fixed_points, StabilityReport};
