//! Setpoint selection for multihead weighing machines.
//!
//! A machine with `H` hoppers fills each package by opening the admissible combination
//! of hoppers whose total weight is the smallest one above the target. This crate
//! models the combination weights as correlated normals ([`machine_model`]), computes
//! moments of their extreme order statistics ([`order_stats`]), searches setpoints with
//! a characterization-based heuristic ([`heuristic`]), and checks any setup by
//! simulating machine cycles ([`simulator`]).

pub mod error;
pub mod heuristic;
pub mod machine_model;
pub mod normal;
pub mod order_stats;
pub mod simulator;

pub use error::{MwmError, Result};
pub use machine_model::{
    combination_distribution, enumerate_combinations, integral_count, CombinationMatrix, CombinationSet,
    IntegralCount, MachineConfig, Setpoints,
};
