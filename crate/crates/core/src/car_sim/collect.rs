//! Synthetic data collection with a seeded excitation policy, plus the pose-log CSV format.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle_diff;

use super::physics::step_with_slip;
use super::types::{BodyVelocity, CarPose, ControlInput, SimParams, SimState};

/// One timestamped sample: the pose at `t` and the command held during `[t, t + h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub pose: CarPose,
    pub control: ControlInput,
    pub slip_front: bool,
    pub slip_rear: bool,
}

/// Output of [`collect_dataset`]: the recorded log plus the plant's true velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectedLog {
    pub h: f64,
    pub records: Vec<LogRecord>,
    /// True body velocity at every record; never written to the CSV.
    pub velocities: Vec<BodyVelocity>,
}

impl CollectedLog {
    pub fn slip_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.slip_front || r.slip_rear)
            .count()
    }

    pub fn state(&self, i: usize) -> SimState {
        SimState::new(self.records[i].pose, self.velocities[i])
    }
}

/// Ornstein–Uhlenbeck excitation with an arena-return override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationConfig {
    /// Arena extent along x (meters), centered on the origin.
    pub arena_length: f64,
    /// Arena extent along y (meters).
    pub arena_width: f64,
    /// Distance from the wall at which the return override engages.
    pub margin: f64,
    pub throttle_mean: f64,
    pub throttle_reversion: f64,
    pub throttle_noise: f64,
    pub steer_reversion: f64,
    pub steer_noise: f64,
    /// Throttle is backed off above this speed (m/s).
    pub max_speed: f64,
    /// Time constant of the low-pass applied to both commands (seconds).
    pub smoothing_time: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            arena_length: 10.0,
            arena_width: 5.0,
            margin: 0.75,
            throttle_mean: 0.25,
            throttle_reversion: 0.8,
            throttle_noise: 1.0,
            steer_reversion: 1.0,
            steer_noise: 1.4,
            max_speed: 4.0,
            smoothing_time: 0.1,
        }
    }
}

struct Excitation<'a> {
    cfg: &'a ExcitationConfig,
    rng: ChaCha8Rng,
    throttle: f64,
    steer: f64,
    last: [f64; 2],
}

impl<'a> Excitation<'a> {
    fn new(cfg: &'a ExcitationConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            throttle: 0.0,
            steer: 0.0,
            last: [0.0; 2],
        }
    }

    fn command(&mut self, state: &SimState, h: f64) -> ControlInput {
        let cfg = self.cfg;
        let n_t: f64 = StandardNormal.sample(&mut self.rng);
        let n_s: f64 = StandardNormal.sample(&mut self.rng);
        self.throttle += cfg.throttle_reversion * (cfg.throttle_mean - self.throttle) * h
            + cfg.throttle_noise * h.sqrt() * n_t;
        self.steer += -cfg.steer_reversion * self.steer * h + cfg.steer_noise * h.sqrt() * n_s;
        self.throttle = self.throttle.clamp(-1.0, 1.0);
        self.steer = self.steer.clamp(-1.0, 1.0);

        let mut throttle = self.throttle;
        let mut steer = self.steer;

        let speed = state.vel.speed();
        if speed > cfg.max_speed {
            throttle -= state.vel.v_x.signum() * (speed - cfg.max_speed);
        }

        let p = state.pose;
        let near_wall = p.x.abs() > 0.5 * cfg.arena_length - cfg.margin
            || p.y.abs() > 0.5 * cfg.arena_width - cfg.margin;
        if near_wall {
            let forward = state.vel.v_x >= 0.0;
            let travel = if forward {
                p.heading
            } else {
                p.heading + std::f64::consts::PI
            };
            let to_center = (-p.y).atan2(-p.x);
            let err = wrap_angle_diff(to_center, travel);
            if err.abs() > std::f64::consts::FRAC_PI_3 {
                let dir = if forward { 1.0 } else { -1.0 };
                steer = err.signum() * dir;
                throttle = if speed > 1.5 { -0.6 * dir } else { 0.4 * dir };
            }
        }
        let blend = h / (cfg.smoothing_time + h);
        self.last[0] += blend * (throttle.clamp(-1.0, 1.0) - self.last[0]);
        self.last[1] += blend * (steer.clamp(-1.0, 1.0) - self.last[1]);
        ControlInput::new(self.last[0], self.last[1])
    }
}

/// Number of records for a run of `duration` seconds sampled every `h` (endpoints included).
pub fn record_count(duration: f64, h: f64) -> usize {
    (duration / h).round() as usize + 1
}

pub fn collect_dataset(params: &SimParams, duration: f64, h: f64, seed: u64) -> Result<CollectedLog> {
    collect_dataset_with(params, duration, h, seed, &ExcitationConfig::default())
}

/// Drives the plant from rest at the arena center with the seeded excitation policy.
pub fn collect_dataset_with(
    params: &SimParams,
    duration: f64,
    h: f64,
    seed: u64,
    excitation: &ExcitationConfig,
) -> Result<CollectedLog> {
    params.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidParameter(format!("duration must be > 0, got {duration}")));
    }
    let count = record_count(duration, h);
    let mut policy = Excitation::new(excitation, seed);
    let mut state = SimState::default();
    let mut records = Vec::with_capacity(count);
    let mut velocities = Vec::with_capacity(count);
    for i in 0..count {
        let control = policy.command(&state, h);
        // the last record's flags come from one extra interval so every row is populated
        let (next, slip) = step_with_slip(&state, &control, params, h)?;
        records.push(LogRecord {
            t: i as f64 * h,
            pose: state.pose,
            control,
            slip_front: slip.front,
            slip_rear: slip.rear,
        });
        velocities.push(state.vel);
        state = next;
    }
    Ok(CollectedLog {
        h,
        records,
        velocities,
    })
}

pub const LOG_HEADER: [&str; 8] = [
    "t",
    "x",
    "y",
    "heading",
    "throttle",
    "steer",
    "slip_front",
    "slip_rear",
];

pub fn write_log_csv(path: impl AsRef<Path>, records: &[LogRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.pose.x.to_string(),
            r.pose.y.to_string(),
            r.pose.heading.to_string(),
            r.control.throttle().to_string(),
            r.control.steer().to_string(),
            u8::from(r.slip_front).to_string(),
            u8::from(r.slip_rear).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_log_csv(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(Error::Config(format!(
            "{}: expected header {}",
            path.display(),
            LOG_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("{}: row {}: bad number in column {}", path.display(), line + 1, LOG_HEADER[i]))
            })
        };
        out.push(LogRecord {
            t: num(0)?,
            pose: CarPose::new(num(1)?, num(2)?, num(3)?),
            control: ControlInput::new(num(4)?, num(5)?),
            slip_front: num(6)? != 0.0,
            slip_rear: num(7)? != 0.0,
        });
    }
    Ok(out)
}
