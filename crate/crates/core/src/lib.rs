//! Simulation, control and calibration of a lettuce growth model at field scale.
//!
//! A single plant is a three-state system (shoot biomass, carbon store,
//! nitrogen store) driven by temperature, light and nitrogen availability.
//! [`field`] runs many plants with perturbed parameters under a feedback
//! [`control`] policy, [`metrics`] summarises the outcome and [`fitting`]
//! calibrates parameters against biomass observations.

pub mod control;
pub mod error;
pub mod field;
pub mod fitting;
pub mod integrator;
pub mod metrics;
pub mod model;
pub mod par;
pub mod stats;

mod rng;

pub use error::{Error, Result};
