use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mlp::MlpModel;
use crate::trajopt::{gradient, optimize, Control, Dynamics, LearnedDynamics, Scenario, TrajOptProblem};

/// Mean norm of the second differences of a 2-channel sequence; 0 when shorter than 3.
pub fn fluctuation(seq: &[Control]) -> f64 {
    if seq.len() < 3 {
        return 0.0;
    }
    let total: f64 = seq
        .windows(3)
        .map(|w| {
            let a = w[2][0] - 2.0 * w[1][0] + w[0][0];
            let b = w[2][1] - 2.0 * w[1][1] + w[0][1];
            a.hypot(b)
        })
        .sum();
    total / (seq.len() - 2) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessTrace {
    pub model: String,
    /// `dl/du` at the all-zero initial controls.
    pub first_gradient: Vec<Control>,
    pub controls: Vec<Control>,
    pub gradient_fluctuation: f64,
    pub control_fluctuation: f64,
    pub iterations: usize,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub scenario: String,
    pub relu: SmoothnessTrace,
    pub gelu: SmoothnessTrace,
}

/// Optimizes `scenario` from zero controls and records the first gradient and the final sequence.
pub fn smoothness_trace(dynamics: &dyn Dynamics, scenario: &Scenario, model: &str) -> Result<SmoothnessTrace> {
    scenario.validate()?;
    let problem = TrajOptProblem::new(dynamics, &scenario.cost, scenario.z0(), scenario.n)
        .with_config(scenario.optimizer.clone());
    let u0 = vec![[0.0; 2]; scenario.n];
    let first_gradient = gradient(&problem, &u0)?.gradient;
    let result = optimize(&problem, &u0)?;
    Ok(SmoothnessTrace {
        model: model.to_string(),
        gradient_fluctuation: fluctuation(&first_gradient),
        control_fluctuation: fluctuation(&result.controls),
        first_gradient,
        iterations: result.iterations,
        final_cost: result.final_cost(),
        controls: result.controls,
    })
}

pub fn smoothness_report(relu: &MlpModel, gelu: &MlpModel, scenario: &Scenario) -> Result<SmoothnessReport> {
    let relu = smoothness_trace(&LearnedDynamics::new(relu, scenario.h), scenario, "relu")?;
    let gelu = smoothness_trace(&LearnedDynamics::new(gelu, scenario.h), scenario, "gelu")?;
    Ok(SmoothnessReport {
        scenario: scenario.name.clone(),
        relu,
        gelu,
    })
}
