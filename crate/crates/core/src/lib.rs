//! Multimachine power-system simulator with a resilient distributed
//! bounded-integral controller for frequency restoration and proportional
//! real/reactive power sharing under actuator limits.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod equilibrium;
pub mod error;
pub mod graph;
pub mod machine;
pub mod network;
pub mod report;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
