use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::car_sim::{self, BodyVelocity, CarPose, ControlInput, SimParams, SimState};
use crate::error::{Error, Result};
use crate::trajopt::{
    optimize, Control, ControlRegularizer, Dynamics, GradMode, LineSearchSchedule, OptimizerConfig, State,
    TrajOptProblem,
};

use super::cost::TrackCost;
use super::track::Track;

pub const TELEMETRY_HEADER: [&str; 15] = [
    "cycle", "t", "x", "y", "heading", "vx", "vy", "omega", "throttle", "steer", "s", "d", "opt_iters", "opt_cost",
    "cycle_ms",
];

/// Real-time budget per cycle at 20 Hz.
const CYCLE_BUDGET_MS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub rate_hz: f64,
    /// Optimizer iterations per cycle.
    pub max_iterations: usize,
    pub target_speed: f64,
    pub progress_weight: f64,
    pub excursion_weight: f64,
    #[serde(flatten)]
    pub regularizer: ControlRegularizer,
    pub latency_compensation: bool,
    pub grad_mode: GradMode,
    pub line_search: LineSearchSchedule,
    pub fd_step: f64,
    /// Closed-loop cycle cap.
    pub max_cycles: usize,
    /// Forward speed at the start line.
    pub initial_speed: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            rate_hz: 20.0,
            max_iterations: 5,
            target_speed: 2.0,
            progress_weight: 1.0,
            excursion_weight: 100.0,
            regularizer: ControlRegularizer::default(),
            latency_compensation: true,
            grad_mode: GradMode::Analytic,
            line_search: LineSearchSchedule {
                count: 64,
                ..LineSearchSchedule::default()
            },
            fd_step: 1e-5,
            max_cycles: 1200,
            initial_speed: 0.0,
        }
    }
}

impl MpcConfig {
    pub fn h(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("mpc horizon must be >= 1".into()));
        }
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(Error::InvalidParameter("mpc rate_hz must be > 0".into()));
        }
        let nonneg = [self.target_speed, self.progress_weight, self.excursion_weight, self.initial_speed];
        if nonneg.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("mpc speeds and weights must be finite and >= 0".into()));
        }
        self.regularizer.validate()?;
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            line_search: self.line_search.clone(),
            max_iterations: self.max_iterations,
            grad_mode: self.grad_mode,
            fd_step: self.fd_step,
            ..OptimizerConfig::default()
        }
    }
}

/// Outcome of one control cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub control: Control,
    /// Sequence the optimizer started from.
    pub warm_start: Vec<Control>,
    /// Sequence retained for the next cycle.
    pub sequence: Vec<Control>,
    pub iterations: usize,
    /// Final optimizer cost; NaN in degraded mode.
    pub cost: f64,
    pub degraded: bool,
    pub first_gradient: Option<Vec<Control>>,
    /// Unwrapped arc length and lateral offset of the measured state.
    pub s: f64,
    pub d: f64,
}

pub struct MpcController<'a> {
    model: &'a dyn Dynamics,
    track: &'a Track,
    config: MpcConfig,
    sequence: Option<Vec<Control>>,
    pending: Control,
    s_prev: Option<f64>,
}

impl<'a> MpcController<'a> {
    pub fn new(model: &'a dyn Dynamics, track: &'a Track, config: MpcConfig) -> Result<Self> {
        config.validate()?;
        if (model.h() - config.h()).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "model step {} does not match control period {}",
                model.h(),
                config.h()
            )));
        }
        Ok(Self {
            model,
            track,
            config,
            sequence: None,
            pending: [0.0; 2],
            s_prev: None,
        })
    }

    /// The control the plant executes during the current cycle.
    pub fn pending(&self) -> Control {
        self.pending
    }

    pub fn sequence(&self) -> Option<&[Control]> {
        self.sequence.as_deref()
    }

    /// Previous sequence shifted left by one with a zero appended; zeros on the first cycle.
    pub fn warm_start(&self) -> Vec<Control> {
        match &self.sequence {
            Some(prev) => prev[1..].iter().copied().chain([[0.0; 2]]).collect(),
            None => vec![[0.0; 2]; self.config.horizon],
        }
    }

    pub fn step(&mut self, measured: &State) -> MpcStep {
        let p = self.track.progress([measured[0], measured[1]]);
        let s = self.s_prev.map_or(p.s, |prev| self.track.unwrap_s(p.s, prev));
        let start = if self.config.latency_compensation {
            self.model.step(measured, &self.pending)
        } else {
            *measured
        };
        let s0 = self.track.unwrap_s(self.track.progress([start[0], start[1]]).s, s);
        let warm_start = self.warm_start();
        let cost = TrackCost {
            track: self.track,
            s0,
            target_speed: self.config.target_speed,
            h: self.config.h(),
            progress_weight: self.config.progress_weight,
            excursion_weight: self.config.excursion_weight,
            regularizer: self.config.regularizer.clone(),
        };
        let problem = TrajOptProblem::new(self.model, &cost, start, self.config.horizon)
            .with_config(self.config.optimizer());
        let (sequence, iterations, value, degraded, first_gradient) = match optimize(&problem, &warm_start) {
            Ok(r) => {
                let value = r.final_cost();
                (r.controls, r.iterations, value, false, r.first_gradient)
            }
            Err(_) => (warm_start.clone(), 0, f64::NAN, true, None),
        };
        let control = sequence[0];
        self.sequence = Some(sequence.clone());
        self.pending = control;
        self.s_prev = Some(s);
        MpcStep {
            control,
            warm_start,
            sequence,
            iterations,
            cost: value,
            degraded,
            first_gradient,
            s,
            d: p.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub t: f64,
    pub state: State,
    /// Control the plant executed during this cycle.
    pub applied: Control,
    pub s: f64,
    pub d: f64,
    pub opt_iters: usize,
    pub opt_cost: f64,
    pub cycle_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapSummary {
    pub completed: bool,
    pub laps_requested: usize,
    pub cycles: usize,
    /// Time at which each requested lap of arc length was covered.
    pub lap_times: Vec<f64>,
    pub distance: f64,
    pub max_abs_d: f64,
    pub mean_forward_speed: f64,
    pub target_speed: f64,
    pub half_width: f64,
    pub degraded_cycles: usize,
    pub shift_identity_violations: usize,
    pub over_budget_fraction: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub records: Vec<CycleRecord>,
    pub summary: LapSummary,
    /// Gradient from the first cycle's first optimizer iteration.
    pub first_gradient: Option<Vec<Control>>,
}

fn row(r: &CycleRecord, with_time: bool) -> Vec<String> {
    let mut v = vec![r.cycle.to_string(), r.t.to_string()];
    v.extend(r.state.iter().map(|x| x.to_string()));
    v.extend(r.applied.iter().map(|x| x.to_string()));
    v.extend([r.s.to_string(), r.d.to_string(), r.opt_iters.to_string(), r.opt_cost.to_string()]);
    if with_time {
        v.push(format!("{:.3}", r.cycle_ms));
    }
    v
}

impl ClosedLoopResult {
    pub fn write_telemetry(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TELEMETRY_HEADER)?;
        for r in &self.records {
            w.write_record(row(r, true))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(serde_json::to_string_pretty(&self.summary)?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over the telemetry rows without the wall-time column.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(TELEMETRY_HEADER[..14].join(",").as_bytes());
        for r in &self.records {
            h.update(b"\n");
            h.update(row(r, false).join(",").as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Alternates plant steps and controller cycles until `laps` of arc length are covered.
///
/// The plant executes each computed control one cycle after it was computed.
pub fn run_closed_loop(
    track: &Track,
    config: &MpcConfig,
    model: &dyn Dynamics,
    plant: &SimParams,
    laps: usize,
) -> Result<ClosedLoopResult> {
    if laps == 0 {
        return Err(Error::InvalidParameter("laps must be >= 1".into()));
    }
    plant.validate()?;
    let h = config.h();
    car_sim::inner_step_count(h, plant)?;
    let mut ctrl = MpcController::new(model, track, config.clone())?;
    let start = track.start_pose();
    let mut state = SimState::new(
        CarPose::new(start[0], start[1], start[2]),
        BodyVelocity::new(config.initial_speed, 0.0, 0.0),
    );
    let goal = laps as f64 * track.length();
    let s_start = track.progress([start[0], start[1]]).s;

    let mut records = Vec::new();
    let mut lap_times = Vec::new();
    let mut first_gradient = None;
    let mut degraded = 0;
    let mut violations = 0;
    let mut failure = None;
    let mut s_prev: Option<f64> = None;
    let mut prev_sequence: Option<Vec<Control>> = None;
    for cycle in 0..config.max_cycles {
        let t = cycle as f64 * h;
        let z = state.to_array();
        let raw = track.progress([z[0], z[1]]).s;
        let s = s_prev.map_or(raw, |p| track.unwrap_s(raw, p));
        s_prev = Some(s);
        while lap_times.len() < laps && s - s_start >= (lap_times.len() + 1) as f64 * track.length() {
            lap_times.push(t);
        }
        if s - s_start >= goal {
            break;
        }

        let applied = ctrl.pending();
        let timer = Instant::now();
        let out = ctrl.step(&z);
        let cycle_ms = timer.elapsed().as_secs_f64() * 1e3;
        let expected_warm: Vec<Control> = match &prev_sequence {
            Some(prev) => prev[1..].iter().copied().chain([[0.0; 2]]).collect(),
            None => vec![[0.0; 2]; config.horizon],
        };
        if out.warm_start != expected_warm {
            violations += 1;
        }
        prev_sequence = Some(out.sequence.clone());
        if cycle == 0 {
            first_gradient = out.first_gradient.clone();
        }
        degraded += usize::from(out.degraded);
        records.push(CycleRecord {
            cycle,
            t,
            state: z,
            applied,
            s: out.s,
            d: out.d,
            opt_iters: out.iterations,
            opt_cost: out.cost,
            cycle_ms,
        });

        match car_sim::step(&state, &ControlInput::from(applied), plant, h) {
            Ok(next) if next.is_finite() => state = next,
            Ok(_) | Err(_) => {
                failure = Some(format!("plant diverged at cycle {cycle}"));
                break;
            }
        }
    }
    let completed = lap_times.len() >= laps;
    if !completed && failure.is_none() {
        failure = Some(format!("cycle cap {} reached before completing {laps} lap(s)", config.max_cycles));
    }
    let n = records.len().max(1) as f64;
    let summary = LapSummary {
        completed,
        laps_requested: laps,
        cycles: records.len(),
        lap_times,
        distance: s_prev.map_or(0.0, |s| s - s_start),
        max_abs_d: records.iter().map(|r| r.d.abs()).fold(0.0, f64::max),
        mean_forward_speed: records.iter().map(|r| r.state[3]).sum::<f64>() / n,
        target_speed: config.target_speed,
        half_width: track.half_width(),
        degraded_cycles: degraded,
        shift_identity_violations: violations,
        over_budget_fraction: records.iter().filter(|r| r.cycle_ms > CYCLE_BUDGET_MS).count() as f64 / n,
        failure,
    };
    Ok(ClosedLoopResult {
        records,
        summary,
        first_gradient,
    })
}
