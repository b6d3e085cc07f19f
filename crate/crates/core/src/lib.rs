//! Synthesis and verification of exponentially stabilizing periodic impulse
//! feedback laws for linear systems.
//!
//! The state flows freely between periodically arranged impulse instants and
//! jumps by `B_k u` at each one. [`riccati`] solves the periodic
//! Riccati-type equation by value iteration and synthesizes the feedback
//! gains; [`observability`] checks the dual weak-observability inequalities
//! and builds steering controls from their variational functional;
//! [`heat`] applies the machinery to spectral truncations of coupled heat
//! systems; [`battery`] cross-validates the three stabilizability verdicts
//! on randomized instances.

pub mod battery;
pub mod error;
pub mod heat;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod riccati;

pub use error::{Error, Result};
