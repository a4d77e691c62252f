use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use driftopt::mpc::{run_closed_loop, MpcConfig, Track};
use driftopt::trajopt::GradMode;
use serde_json::json;

use super::{create_dir, plant_params, read_config, ModelChoice, RunFailed};
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Args)]
pub struct RaceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Track file [default: bundled desk oval].
    #[arg(long)]
    pub track: Option<PathBuf>,
    /// Model file, or `sim` to control with the simulator itself.
    #[arg(long)]
    pub model: String,
    /// Simulator parameter file for the plant (and for `--model sim`).
    #[arg(long)]
    pub plant: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub laps: usize,
    #[arg(long)]
    pub grad_mode: Option<GradMode>,
    #[arg(long)]
    pub target_speed: Option<f64>,
    #[arg(long)]
    pub max_cycles: Option<usize>,
}

pub fn race(args: RaceArgs) -> Result<()> {
    let mut cfg: MpcConfig = read_config(args.common.config.as_deref())?;
    cfg.grad_mode = args.grad_mode.unwrap_or(cfg.grad_mode);
    cfg.target_speed = args.target_speed.unwrap_or(cfg.target_speed);
    cfg.max_cycles = args.max_cycles.unwrap_or(cfg.max_cycles);
    cfg.validate()?;
    let track = match &args.track {
        Some(p) => Track::load(p).with_context(|| format!("loading track {}", p.display()))?,
        None => Track::desk_oval(),
    };
    let plant = plant_params(args.plant.as_deref())?;
    let model = ModelChoice::load(&args.model, cfg.h(), &plant)?;
    let out = args.common.out_dir("race");
    let mut manifest = ManifestBuilder::new("race", &out, args.common.config.as_deref(), args.common.seed);
    for p in [&args.track, &args.plant].into_iter().flatten() {
        manifest.config_path(p);
    }

    let result = run_closed_loop(&track, &cfg, model.dynamics(), &plant, args.laps)?;
    create_dir(&out)?;
    let telemetry = out.join("race.csv");
    let lap = out.join("lap.json");
    let gradient = out.join("first_gradient.csv");
    result.write_telemetry(&telemetry)?;
    result.write_summary(&lap)?;
    let mut w = String::from("step,grad_throttle,grad_steer\n");
    for (i, g) in result.first_gradient.iter().flatten().enumerate() {
        w.push_str(&format!("{i},{},{}\n", g[0], g[1]));
    }
    std::fs::write(&gradient, w).with_context(|| format!("writing {}", gradient.display()))?;
    manifest.volatile(telemetry);
    manifest.volatile(lap);
    manifest.artifact(gradient);
    let s = &result.summary;
    manifest.details(json!({
        "model": args.model,
        "grad_mode": cfg.grad_mode,
        "telemetry_content_hash": result.content_hash(),
        "completed": s.completed,
        "lap_times": s.lap_times,
        "max_abs_d": s.max_abs_d,
        "mean_forward_speed": s.mean_forward_speed,
    }));
    manifest.finish()?;

    println!(
        "{} cycles, laps {:?}, max |d| {:.3} m, mean speed {:.2} m/s, {:.0}% of cycles over 50 ms",
        s.cycles,
        s.lap_times,
        s.max_abs_d,
        s.mean_forward_speed,
        100.0 * s.over_budget_fraction
    );
    match &s.failure {
        Some(reason) => Err(RunFailed(format!("race incomplete: {reason}")).into()),
        None => Ok(()),
    }
}
