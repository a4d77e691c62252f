//! Receding-horizon racing: track geometry, progress cost, warm-started control loop.

mod controller;
mod cost;
mod track;

pub use controller::{
    run_closed_loop, ClosedLoopResult, CycleRecord, LapSummary, MpcConfig, MpcController, MpcStep,
    TELEMETRY_HEADER,
};
pub use cost::TrackCost;
pub use track::{Projection, Track};
