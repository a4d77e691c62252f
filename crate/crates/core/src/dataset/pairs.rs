use serde::{Deserialize, Serialize};

use crate::car_sim::{BodyVelocity, CarPose, ControlInput, LogRecord};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, rotate, unwrap_angles, wrap_angle_diff};

use super::savgol::SavitzkyGolay;

/// Uniformly sampled pose log with the command held after each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLog {
    timestamps: Vec<f64>,
    poses: Vec<CarPose>,
    controls: Vec<ControlInput>,
    h: f64,
}

impl PoseLog {
    /// `controls` may have as many entries as `poses` or one fewer.
    pub fn new(timestamps: Vec<f64>, poses: Vec<CarPose>, controls: Vec<ControlInput>) -> Result<Self> {
        if poses.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "pose log needs at least 3 frames, got {}",
                poses.len()
            )));
        }
        if timestamps.len() != poses.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        if controls.len() != poses.len() && controls.len() + 1 != poses.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} controls for {} poses",
                controls.len(),
                poses.len()
            )));
        }
        let h = timestamps[1] - timestamps[0];
        if !(h > 0.0) {
            return Err(Error::InvalidParameter("timestamps must be strictly increasing".into()));
        }
        for w in timestamps.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || (d - h).abs() > 1e-6 * h {
                return Err(Error::InvalidParameter(format!(
                    "timestamps must be uniformly spaced (step {h}, found {d})"
                )));
            }
        }
        Ok(Self {
            timestamps,
            poses,
            controls,
            h,
        })
    }

    pub fn from_records(records: &[LogRecord]) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.t).collect(),
            records.iter().map(|r| r.pose).collect(),
            records.iter().map(|r| r.control).collect(),
        )
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn poses(&self) -> &[CarPose] {
        &self.poses
    }

    pub fn controls(&self) -> &[ControlInput] {
        &self.controls
    }

    /// Copy of the log with every pose mapped through `f`.
    pub fn map_poses(&self, f: impl Fn(&CarPose) -> CarPose) -> Self {
        Self {
            poses: self.poses.iter().map(f).collect(),
            ..self.clone()
        }
    }
}

/// A supervised sample `(v_i, u_i) → v_{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PairRecord", into = "PairRecord")]
pub struct TrainingPair {
    pub v_in: BodyVelocity,
    pub u_in: ControlInput,
    pub v_out: BodyVelocity,
}

impl TrainingPair {
    pub fn input(&self) -> [f64; 5] {
        let v = self.v_in;
        let u = self.u_in;
        [v.v_x, v.v_y, v.omega, u.throttle(), u.steer()]
    }

    pub fn target(&self) -> [f64; 3] {
        self.v_out.to_array()
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    v_in: [f64; 3],
    u: [f64; 2],
    v_out: [f64; 3],
}

impl From<PairRecord> for TrainingPair {
    fn from(r: PairRecord) -> Self {
        Self {
            v_in: BodyVelocity::from_array(r.v_in),
            u_in: ControlInput::from(r.u),
            v_out: BodyVelocity::from_array(r.v_out),
        }
    }
}

impl From<TrainingPair> for PairRecord {
    fn from(p: TrainingPair) -> Self {
        Self {
            v_in: p.v_in.to_array(),
            u: p.u_in.to_array(),
            v_out: p.v_out.to_array(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub window: usize,
    pub poly_order: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window: 9,
            poly_order: 2,
        }
    }
}

/// World-frame rates `(ẋ, ẏ, heading rate)` at every frame of `log`.
///
/// Central differences inside, one-sided at both ends; heading differences are wrap-aware.
pub fn finite_diff_velocities(log: &PoseLog) -> Vec<[f64; 3]> {
    let p = log.poses();
    let n = p.len();
    let h = log.h();
    let rate = |a: &CarPose, b: &CarPose, span: f64| {
        [
            (a.x - b.x) / span,
            (a.y - b.y) / span,
            wrap_angle_diff(a.heading, b.heading) / span,
        ]
    };
    (0..n)
        .map(|i| match i {
            0 => rate(&p[1], &p[0], h),
            i if i == n - 1 => rate(&p[n - 1], &p[n - 2], h),
            i => rate(&p[i + 1], &p[i - 1], 2.0 * h),
        })
        .collect()
}

pub fn to_local_frame(heading: f64, global: [f64; 3]) -> BodyVelocity {
    let v = rotate(-heading, [global[0], global[1]]);
    BodyVelocity::new(v[0], v[1], global[2])
}

pub fn to_global_frame(heading: f64, local: &BodyVelocity) -> [f64; 3] {
    let v = rotate(heading, [local.v_x, local.v_y]);
    [v[0], v[1], local.omega]
}

/// Smooths x, y and unwrapped heading; short logs shrink the window to fit.
pub fn smooth_poses(log: &PoseLog, cfg: &SmoothingConfig) -> Result<PoseLog> {
    let n = log.len();
    let mut window = cfg.window.min(if n % 2 == 1 { n } else { n - 1 });
    if window < 3 {
        window = 3;
    }
    let order = cfg.poly_order.min(window - 1);
    let filter = SavitzkyGolay::new(window, order)?;
    let xs: Vec<f64> = log.poses().iter().map(|p| p.x).collect();
    let ys: Vec<f64> = log.poses().iter().map(|p| p.y).collect();
    let headings: Vec<f64> = log.poses().iter().map(|p| p.heading).collect();
    let xs = filter.apply(&xs)?;
    let ys = filter.apply(&ys)?;
    let hs = filter.apply(&unwrap_angles(&headings))?;
    let poses = (0..n)
        .map(|i| CarPose::new(xs[i], ys[i], normalize_angle(hs[i])))
        .collect();
    Ok(PoseLog {
        poses,
        ..log.clone()
    })
}

/// Body-frame velocity estimate at every frame (smoothed, differenced, localized).
pub fn local_velocities(log: &PoseLog, cfg: &SmoothingConfig) -> Result<Vec<BodyVelocity>> {
    let smoothed = smooth_poses(log, cfg)?;
    let global = finite_diff_velocities(&smoothed);
    Ok(smoothed
        .poses()
        .iter()
        .zip(global)
        .map(|(p, g)| to_local_frame(p.heading, g))
        .collect())
}

/// Emits `(v_i, u_i, v_{i+1})` for `i = 0..=N−3`: `N − 2` pairs, the last frame's
/// one-sided estimate never serving as a target.
pub fn build_pairs(log: &PoseLog, cfg: &SmoothingConfig) -> Result<Vec<TrainingPair>> {
    let vel = local_velocities(log, cfg)?;
    let n = log.len();
    Ok((0..n - 2)
        .map(|i| TrainingPair {
            v_in: vel[i],
            u_in: log.controls()[i],
            v_out: vel[i + 1],
        })
        .collect())
}
