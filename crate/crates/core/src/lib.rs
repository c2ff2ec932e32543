//! Trajectory and power planning for a UAV multicast transmitter.

pub mod alloc;
pub mod channel;
pub mod error;
pub mod evaluate;
pub mod flightplan;
pub mod lp;
pub mod pipeline;
pub mod relaxed;
mod power;
pub mod scenario;
pub mod search;
mod tsp;

pub use error::{PlanError, Result};
