//! Simulation harness and command-line front end for the `pfa` library.

pub mod commands;
pub mod config;
pub mod convergence;
pub mod error;
pub mod experiment;
pub mod io;

pub use error::{HarnessError, Result};

/// Library version embedded in every JSON output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
