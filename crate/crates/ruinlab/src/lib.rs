//! Numerical laboratory for ruin probabilities of an insurance reserve
//! fully invested in a Markov-modulated geometric Brownian motion.
//!
//! Two routes to the same quantity validate each other:
//!
//! * Monte Carlo simulation of the exact reserve dynamics between and
//!   across claim times ([`sim`]), driven by the regime process ([`ctmc`]);
//! * the integro-differential operator system for the survival/ruin
//!   probabilities ([`ide`]) and, for exponential claims, its third-order
//!   ODE reduction solved as a boundary-value problem ([`ode`]).
//!
//! [`validation`] holds the closed-form degenerate oracle, cross-method
//! comparison and smoothness diagnostics; [`model`] owns configuration and
//! all sign conventions.

pub mod ctmc;
pub mod ide;
pub mod model;
pub mod numerics;
pub mod ode;
pub mod sim;
pub mod testfn;
pub mod validation;

pub use model::{validate_config, ModelConfig};
