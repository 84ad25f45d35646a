//! Finite-time underwater target hunting: M pursuer vehicles against one
//! evader on a fixed-depth plane.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: planar vehicle kinematics and simplified dynamics.
//! - [`acoustics`]: sound speed, link delays and the delayed-state buffer.
//! - [`game`]: joint state, penalties, payoffs and termination.
//! - [`env`]: the slot-stepped world shared by both controllers.
//! - [`analytic`]: Hamiltonian, Riccati integration and SDRE feedback.
//! - [`dqn`]: delayed-observation deep Q-learning for the pursuers.
//! - [`metrics`]: Kendall consistency and curve smoothing.
//! - [`config`], [`runner`], [`checkpoint`]: configuration, orchestration and persistence.

pub mod acoustics;
pub mod analytic;
pub mod checkpoint;
pub mod config;
pub mod dqn;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod game;
pub mod metrics;
pub mod runner;

pub use error::{Error, Result};
