mod collect;
mod optimize;
mod race;
mod select;
mod train;

use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use driftopt::car_sim::SimParams;
use driftopt::mlp::MlpModel;
use driftopt::trajopt::{Dynamics, LearnedDynamics, SimDynamics};
use serde::de::DeserializeOwned;

pub use collect::{collect, CollectArgs};
pub use optimize::{optimize, OptimizeArgs};
pub use race::{race, RaceArgs};
pub use select::{select, SelectArgs};
pub use train::{train, TrainArgs};

/// Bad input detected by the command itself.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// The run finished but did not achieve its goal; partial artifacts were written.
#[derive(Debug)]
pub struct RunFailed(pub String);

impl fmt::Display for RunFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RunFailed {}

/// 2 for invalid inputs, 3 for runtime or numerical failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<driftopt::Error>() {
            return if e.is_validation() { 2 } else { 3 };
        }
        if cause.is::<Invalid>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if cause.is::<RunFailed>() {
            return 3;
        }
    }
    3
}

pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn plant_params(path: Option<&Path>) -> Result<SimParams> {
    match path {
        None => Ok(SimParams::default()),
        Some(p) => Ok(SimParams::from_json_file(p)?),
    }
}

/// A model file or the simulator itself (`sim`).
pub enum ModelChoice {
    Sim(SimDynamics),
    Learned(LearnedDynamics<MlpModel>),
}

impl ModelChoice {
    pub fn load(spec: &str, h: f64, plant: &SimParams) -> Result<Self> {
        if spec == "sim" {
            return Ok(Self::Sim(SimDynamics::new(plant.clone(), h)?));
        }
        let model = MlpModel::load(spec).with_context(|| format!("loading model {spec}"))?;
        Ok(Self::Learned(LearnedDynamics::new(model, h)))
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        match self {
            Self::Sim(d) => d,
            Self::Learned(d) => d,
        }
    }
}
