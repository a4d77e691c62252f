use serde::{Deserialize, Serialize};

use crate::dataset::ValidationTrajectory;
use crate::error::{Error, Result};
use crate::geometry::wrap_angle_diff;
use crate::mlp::MlpModel;
use crate::trajopt::{pose_of, rollout, state_from, Control, Dynamics, LearnedDynamics};

/// Final-pose errors of open-loop replays and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TveReport {
    pub model: String,
    pub errors: Vec<f64>,
    pub tve: f64,
    pub count: usize,
}

impl TveReport {
    pub fn from_errors(model: impl Into<String>, errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InsufficientData("validation set is empty".into()));
        }
        let count = errors.len();
        let tve = errors.iter().sum::<f64>() / count as f64;
        Ok(Self {
            model: model.into(),
            errors,
            tve,
            count,
        })
    }
}

/// L1 distance between two poses with the heading difference wrapped.
pub fn pose_l1_error(pred: [f64; 3], truth: [f64; 3]) -> f64 {
    (pred[0] - truth[0]).abs() + (pred[1] - truth[1]).abs() + wrap_angle_diff(pred[2], truth[2]).abs()
}

/// Replays every trajectory's recorded commands through `dynamics` from its recorded start.
pub fn tve(dynamics: &dyn Dynamics, validation: &[ValidationTrajectory], model: &str) -> Result<TveReport> {
    if validation.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let errors = validation
        .iter()
        .map(|traj| {
            let z0 = state_from(traj.x0().to_array(), traj.v0.to_array());
            let u: Vec<Control> = traj.controls().iter().map(|c| c.to_array()).collect();
            let z = rollout(dynamics, &z0, &u);
            pose_l1_error(pose_of(z.last().unwrap()), traj.final_pose().to_array())
        })
        .collect();
    TveReport::from_errors(model, errors)
}

pub fn tve_model(model: &MlpModel, h: f64, validation: &[ValidationTrajectory], name: &str) -> Result<TveReport> {
    tve(&LearnedDynamics::new(model, h), validation, name)
}
