//! Simulated IoT microfarm.
//!
//! A growth chamber model, the sensor node that samples it, the gateway that
//! persists readings and runs threshold automation, and the statistics used
//! to evaluate plant growth.

pub mod clock;
pub mod config;
pub mod control;
pub mod gateway;
pub mod model;
pub mod node;
pub mod report;
pub mod sim;
pub mod stack;
pub mod stats;
pub mod store;
pub mod wire;
