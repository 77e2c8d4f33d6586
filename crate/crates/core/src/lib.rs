//! Simulation and analysis of energy-accumulative hopping robots.
//!
//! A two-mass vertical model (body and foot joined by a sprung leg with a hard stop)
//! is integrated through drop, stance and rebound. Each hop is summarized by an
//! eight-term energy ledger, and critical rebound-input ratios are solved over the
//! design space of total mass and body-mass fraction.

pub mod accumulation;
pub mod analyze;
pub mod cli;
pub mod control;
pub mod dynamics;
pub mod elastomer;
pub mod energy;
pub mod error;
pub mod params;
pub mod report;
pub mod stance;

pub use error::{HopError, Result};
pub use params::{default_params, RobotParams};
