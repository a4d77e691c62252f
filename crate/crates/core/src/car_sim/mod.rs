//! Drift-capable planar car simulator: ground-truth plant and data generator.

mod collect;
mod physics;
mod types;

pub use collect::{
    collect_dataset, collect_dataset_with, read_log_csv, record_count, write_log_csv,
    CollectedLog, ExcitationConfig, LogRecord, LOG_HEADER,
};
pub use physics::{
    apply_friction, cap_wheel_accel, inner_step_count, rollout_sim, step, step_with_slip,
    wheel_angle, wheel_targets, FrictionOutcome, SlipFlags, WheelAccels,
};
pub use types::{BodyVelocity, CarPose, ControlInput, SimParams, SimState};

#[cfg(test)]
use physics::inner_step;
