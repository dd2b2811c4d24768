//! Command-line front end of the double pendulum MPC: INI configuration,
//! wall-clock timing, artifact writers and a parallel robustness suite.

pub mod cli;
pub mod clock;
pub mod config;
pub mod io;
pub mod suite;

pub use clock::WallClock;
pub use config::{parse_config, ConfigError, RunConfig};
