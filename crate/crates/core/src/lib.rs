//! Discrete-time pickup-and-delivery fleet simulator with bounded-delay
//! adversarial agents, closed-form fleet-size bounds and stability checks.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod demand;
pub mod fleet;
pub mod graph;
pub mod matching;
pub mod policy;
pub mod sim;
pub mod transport;
