use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, rotate};

/// Physical constants of the drift-capable bicycle plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Front-to-rear axle distance in meters.
    pub wheelbase: f64,
    /// Rear-wheel acceleration per unit throttle, m/s².
    pub drive_gain: f64,
    /// Maximum front-wheel angle in radians (steer = ±1).
    pub steer_gain: f64,
    /// Per-wheel acceleration available before the tire breaks loose, m/s².
    pub static_accel_limit: f64,
    /// Per-wheel acceleration available while sliding, m/s².
    pub dynamic_accel_limit: f64,
    /// Linear velocity damping, 1/s.
    pub drag_coeff: f64,
    /// Inner integration step, seconds.
    pub dt_sim: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.25,
            drive_gain: 8.0,
            steer_gain: 0.35,
            static_accel_limit: 6.0,
            dynamic_accel_limit: 3.5,
            drag_coeff: 0.2,
            dt_sim: 1.0 / 240.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.wheelbase,
            self.drive_gain,
            self.steer_gain,
            self.static_accel_limit,
            self.dynamic_accel_limit,
            self.drag_coeff,
            self.dt_sim,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sim params must be finite".into()));
        }
        if self.wheelbase <= 0.0 {
            return Err(Error::InvalidParameter("wheelbase must be > 0".into()));
        }
        if self.dt_sim <= 0.0 {
            return Err(Error::InvalidParameter("dt_sim must be > 0".into()));
        }
        if !(0.0 < self.dynamic_accel_limit && self.dynamic_accel_limit < self.static_accel_limit) {
            return Err(Error::InvalidParameter(
                "need 0 < dynamic_accel_limit < static_accel_limit".into(),
            ));
        }
        if !(0.0 < self.steer_gain && self.steer_gain < FRAC_PI_2) {
            return Err(Error::InvalidParameter("steer_gain must lie in (0, π/2)".into()));
        }
        if self.drag_coeff < 0.0 {
            return Err(Error::InvalidParameter("drag_coeff must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: SimParams = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }
}

/// World-frame pose. The heading is kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CarPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl CarPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.heading]
    }

    /// Applies the rigid motion "rotate by `rotation` about the origin, then translate".
    pub fn transformed(&self, rotation: f64, translation: [f64; 2]) -> Self {
        let p = rotate(rotation, [self.x, self.y]);
        Self::new(
            p[0] + translation[0],
            p[1] + translation[1],
            self.heading + rotation,
        )
    }
}

/// Velocity in the car frame: forward, leftward, yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl BodyVelocity {
    pub const ZERO: BodyVelocity = BodyVelocity {
        v_x: 0.0,
        v_y: 0.0,
        omega: 0.0,
    };

    pub fn new(v_x: f64, v_y: f64, omega: f64) -> Self {
        Self { v_x, v_y, omega }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.v_x, self.v_y, self.omega]
    }

    pub fn is_finite(&self) -> bool {
        self.v_x.is_finite() && self.v_y.is_finite() && self.omega.is_finite()
    }

    pub fn speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }
}

/// Throttle and steer commands, each clamped to [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ControlInput {
    throttle: f64,
    steer: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        throttle: 0.0,
        steer: 0.0,
    };

    pub fn new(throttle: f64, steer: f64) -> Self {
        Self {
            throttle: throttle.clamp(-1.0, 1.0),
            steer: steer.clamp(-1.0, 1.0),
        }
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.throttle, self.steer]
    }
}

impl From<[f64; 2]> for ControlInput {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<ControlInput> for [f64; 2] {
    fn from(c: ControlInput) -> Self {
        c.to_array()
    }
}

/// Pose plus the velocity memory the plant needs between steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimState {
    pub pose: CarPose,
    pub vel: BodyVelocity,
}

impl SimState {
    pub fn new(pose: CarPose, vel: BodyVelocity) -> Self {
        Self { pose, vel }
    }

    pub fn at_rest(pose: CarPose) -> Self {
        Self {
            pose,
            vel: BodyVelocity::ZERO,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.pose.x,
            self.pose.y,
            self.pose.heading,
            self.vel.v_x,
            self.vel.v_y,
            self.vel.omega,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            pose: CarPose::new(a[0], a[1], a[2]),
            vel: BodyVelocity::new(a[3], a[4], a[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}
