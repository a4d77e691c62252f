use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cost::CostSpec;
use super::dynamics::{state_from, Control, State};
use super::optimizer::{OptimizerConfig, Termination, TrajOptResult};

pub const TELEMETRY_HEADER: [&str; 9] = ["step", "x", "y", "heading", "vx", "vy", "omega", "throttle", "steer"];

/// An offline optimization task as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub h: f64,
    pub x0: [f64; 3],
    #[serde(default)]
    pub v0: [f64; 3],
    pub cost: CostSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Model file path, or `"sim"` for the simulator itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

const BUNDLED: [(&str, &str); 3] = [
    ("parallel_parking", include_str!("../../assets/scenarios/parallel_parking.json")),
    ("dynamic_reverse", include_str!("../../assets/scenarios/dynamic_reverse.json")),
    ("drifting_turn", include_str!("../../assets/scenarios/drifting_turn.json")),
];

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scenario `{}` needs n >= 1 and h > 0",
                self.name
            )));
        }
        if self.x0.iter().chain(&self.v0).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("scenario start state must be finite".into()));
        }
        self.cost.validate(self.n)?;
        self.optimizer.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no bundled scenario named `{name}`")))?;
        Self::from_json(text)
    }

    pub fn z0(&self) -> State {
        state_from(self.x0, self.v0)
    }
}

/// Writes one row per state; the final row has no control.
pub fn write_telemetry(path: impl AsRef<Path>, states: &[State], controls: &[Control]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TELEMETRY_HEADER)?;
    for (i, z) in states.iter().enumerate() {
        let mut row: Vec<String> = vec![i.to_string()];
        row.extend(z.iter().map(|x| x.to_string()));
        match controls.get(i) {
            Some(u) => row.extend(u.iter().map(|x| x.to_string())),
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub scenario: String,
    pub iterations: usize,
    pub termination: Termination,
    pub cost_history: Vec<f64>,
    pub alpha_history: Vec<f64>,
    pub initial_target_cost: f64,
    pub final_target_cost: f64,
}

impl OptimizationReport {
    pub fn new(scenario: &Scenario, result: &TrajOptResult, initial_target_cost: f64) -> Self {
        Self {
            scenario: scenario.name.clone(),
            iterations: result.iterations,
            termination: result.termination,
            cost_history: result.cost_history.clone(),
            alpha_history: result.alpha_history.clone(),
            initial_target_cost,
            final_target_cost: scenario.cost.target_cost(&result.states),
        }
    }
}
