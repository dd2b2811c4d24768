//! Nonlinear model predictive control for the Acrobot and Pendubot.
//!
//! The crate is `no_std` and only needs an allocator. Wall-clock time enters
//! through the [`clock::Clock`] trait so solvers can enforce time budgets on
//! any platform.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clock;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod ocp;
pub mod simbench;
pub mod solver;

pub use dynamics::{JointTorque, ModelParams, Robot, State};
pub use error::{ControllerError, ModelError, OcpError, SimError};
