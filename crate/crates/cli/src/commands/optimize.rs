use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use driftopt::car_sim::{rollout_sim, ControlInput, SimState};
use driftopt::geometry::wrap_angle_diff;
use driftopt::trajopt::{optimize as run_optimizer, write_telemetry, OptimizationReport, Scenario, TrajOptProblem};
use serde::Serialize;
use serde_json::json;

use super::{create_dir, plant_params, write_json, Invalid, ModelChoice};
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Bundled scenario name, used when no `--config` scenario file is given.
    #[arg(long, default_value = "parallel_parking")]
    pub scenario: String,
    /// Model file, or `sim` to plan with the simulator itself. Overrides the scenario's model.
    #[arg(long)]
    pub model: Option<String>,
    /// Simulator parameter file for the replay (and for `--model sim`).
    #[arg(long)]
    pub plant: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Serialize)]
struct TargetError {
    step: usize,
    target: [f64; 3],
    nominal: [f64; 3],
    executed: [f64; 3],
    nominal_position_error: f64,
    executed_position_error: f64,
    executed_heading_error: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    #[serde(flatten)]
    report: OptimizationReport,
    model: String,
    targets: Vec<TargetError>,
    /// Mean over steps of the executed-vs-nominal position distance.
    mean_l2_position_error: f64,
    final_l2_position_error: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    let mut scenario = match &args.common.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::bundled(&args.scenario)?,
    };
    if let Some(it) = args.max_iterations {
        scenario.optimizer.max_iterations = it;
    }
    let model_spec = args
        .model
        .clone()
        .or_else(|| scenario.model.clone())
        .ok_or_else(|| Invalid("no model given: pass --model <file|sim>".into()))?;
    let plant = plant_params(args.plant.as_deref())?;
    let model = ModelChoice::load(&model_spec, scenario.h, &plant)?;
    let out = args.common.out_dir("optimize");
    let mut manifest = ManifestBuilder::new("optimize", &out, args.common.config.as_deref(), args.common.seed);
    if let Some(p) = &args.plant {
        manifest.config_path(p);
    }

    let problem = TrajOptProblem::new(model.dynamics(), &scenario.cost, scenario.z0(), scenario.n)
        .with_config(scenario.optimizer.clone());
    let zeros = vec![[0.0; 2]; scenario.n];
    let initial = scenario.cost.target_cost(&driftopt::trajopt::rollout(model.dynamics(), &scenario.z0(), &zeros));
    let result = run_optimizer(&problem, &zeros)?;

    let controls: Vec<ControlInput> = result.controls.iter().map(|&u| ControlInput::from(u)).collect();
    let executed: Vec<[f64; 6]> = rollout_sim(&SimState::from_array(scenario.z0()), &controls, &plant, scenario.h)?
        .iter()
        .map(|s| s.to_array())
        .collect();
    let nominal = &result.states;
    let targets = scenario
        .cost
        .targets
        .iter()
        .map(|t| {
            let (n, e) = (nominal[t.step], executed[t.step]);
            TargetError {
                step: t.step,
                target: t.pose,
                nominal: [n[0], n[1], n[2]],
                executed: [e[0], e[1], e[2]],
                nominal_position_error: distance(&n, &t.pose),
                executed_position_error: distance(&e, &t.pose),
                executed_heading_error: wrap_angle_diff(e[2], t.pose[2]),
            }
        })
        .collect();
    let deviations: Vec<f64> = nominal.iter().zip(&executed).map(|(n, e)| distance(n, e)).collect();
    let summary = Summary {
        report: OptimizationReport::new(&scenario, &result, initial),
        model: model_spec.clone(),
        targets,
        mean_l2_position_error: deviations.iter().sum::<f64>() / deviations.len() as f64,
        final_l2_position_error: *deviations.last().unwrap(),
    };

    create_dir(&out)?;
    let nominal_path = out.join("nominal.csv");
    let executed_path = out.join("executed.csv");
    let summary_path = out.join("summary.json");
    write_telemetry(&nominal_path, nominal, &result.controls)?;
    write_telemetry(&executed_path, &executed, &result.controls)?;
    write_json(&summary_path, &summary)?;
    manifest.artifact(nominal_path);
    manifest.artifact(executed_path);
    manifest.artifact(summary_path);
    manifest.details(json!({
        "scenario": scenario.name,
        "model": model_spec,
        "iterations": result.iterations,
        "initial_target_cost": initial,
        "final_target_cost": summary.report.final_target_cost,
    }));
    manifest.finish()?;
    println!(
        "{}: target cost {:.4} -> {:.4} in {} iterations ({:?}); executed-vs-nominal mean position error {:.4} m",
        scenario.name,
        initial,
        summary.report.final_target_cost,
        result.iterations,
        result.termination,
        summary.mean_l2_position_error
    );
    Ok(())
}
