//! Simulation and analysis toolkit for a wavevector-multiplexed photon-pair
//! source read out by a spatially resolving single-photon camera.
//!
//! * [`model`]: closed-form acceptance, correlation and retrieval formulas.
//! * [`schmidt`]: mode counting by singular-value decomposition.
//! * [`sim`]: counter-seeded Monte Carlo camera frames.
//! * [`analysis`]: streaming coincidence, `g²` and fitting estimators.
//! * [`protocol`]: heralded multi-photon generation with feedback.

pub mod analysis;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod schmidt;
pub mod sim;
