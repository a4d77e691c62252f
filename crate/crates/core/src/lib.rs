//! Learned dynamics for a drifting RC car, and gradient-based trajectory
//! optimization and receding-horizon control through that model.

pub mod car_sim;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod mlp;
pub mod mpc;
pub mod selection;
pub mod trajopt;

pub use error::{Error, Result};
