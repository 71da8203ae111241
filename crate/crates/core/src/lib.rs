//! Hybrid volt/VAR control for radial distribution feeders.
//!
//! The crate models a feeder ([`feeder`], [`bbus`]), evaluates its voltages
//! with LinDistFlow or an exact AC sweep ([`flow`]), solves the static
//! voltage-mismatch problem with a projected partial primal-dual method
//! ([`ppd`]) and simulates the asynchronous per-bus protocol under
//! unreliable communication ([`sim`]). [`scenario`] handles the file
//! formats and [`cli`] the command-line driver.

pub mod bbus;
pub mod cli;
pub mod error;
pub mod feeder;
pub mod flow;
pub mod ppd;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
