//! Multi-zone geothermal heat pump floor heating: thermal network model,
//! steady-state optimum, primal-dual controllers and closed-loop simulation.

pub mod error;
pub mod model;
pub mod oracle;
pub mod control;
pub mod sim;
pub mod agents;
pub mod config;

pub use error::{Error, Result};
