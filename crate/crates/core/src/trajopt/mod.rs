//! Gradient-based trajectory optimization through a learned or simulated transition.

mod cost;
mod dynamics;
mod optimizer;
mod scenario;

pub use cost::{barrier, ControlRegularizer, CostEval, CostSpec, Objective, TargetSpec};
pub use dynamics::{
    pose_of, state_from, vel_of, ConstantVelocity, Control, ControlJacobian, Dynamics,
    LearnedDynamics, LinearVelocity, SimDynamics, State, StateJacobian, VelocityModel,
    ZeroVelocity,
};
pub use optimizer::{
    candidate_costs, cost_gradient, fd_cost_gradient, gradient, line_search, optimize,
    residual_jacobians, rollout, rollout_batch, AcceptedStep, GradMode, GradientEval,
    LineSearchSchedule, OptimizerConfig, Termination, TrajOptProblem, TrajOptResult,
};
pub use scenario::{write_telemetry, OptimizationReport, Scenario, TELEMETRY_HEADER};
