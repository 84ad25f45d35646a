//! Delayed-observation deep Q-learning for the pursuer team.
//!
//! One Q-network is shared by all pursuers; each acts on its own encoding of
//! the delayed joint state. Q estimates the discounted pay-off still to come,
//! so actions are picked by argmin.

mod agent;
pub mod network;
pub mod replay;

pub use agent::*;
