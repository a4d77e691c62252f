//! Bicycle-model plant with a two-level friction limit.
//!
//! Each inner step asks both wheels for the acceleration that would remove
//! their sideways sliding within one `dt_sim`, adds the rear drive, and caps
//! every wheel: a request above the static limit breaks traction and is
//! rescaled to the (lower) dynamic limit. The body has unit mass split evenly
//! over the two axles and yaw inertia `(wheelbase/2)²` about the midpoint.

use crate::error::{Error, Result};

use super::types::{ControlInput, SimParams, SimState};

/// Per-wheel accelerations in each wheel's own frame.
///
/// `front_lat` acts along the steered wheel's lateral axis; the rear pair is
/// expressed in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelAccels {
    pub front_lat: f64,
    pub rear_lat: f64,
    pub rear_long: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlipFlags {
    pub front: bool,
    pub rear: bool,
}

impl SlipFlags {
    pub fn any(&self) -> bool {
        self.front || self.rear
    }

    fn merge(self, other: SlipFlags) -> SlipFlags {
        SlipFlags {
            front: self.front || other.front,
            rear: self.rear || other.rear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrictionOutcome {
    pub realized: WheelAccels,
    pub slip: SlipFlags,
}

/// Front-wheel angle for a steer command.
#[inline]
pub fn wheel_angle(control: &ControlInput, params: &SimParams) -> f64 {
    control.steer() * params.steer_gain
}

pub fn wheel_targets(state: &SimState, control: &ControlInput, params: &SimParams) -> WheelAccels {
    let half = 0.5 * params.wheelbase;
    let v = &state.vel;
    let (s, c) = wheel_angle(control, params).sin_cos();

    // contact-point velocities in the body frame
    let front = [v.v_x, v.v_y + v.omega * half];
    let rear_side = v.v_y - v.omega * half;

    let front_perp = -s * front[0] + c * front[1];
    WheelAccels {
        front_lat: -front_perp / params.dt_sim,
        rear_lat: -rear_side / params.dt_sim,
        rear_long: control.throttle() * params.drive_gain,
    }
}

/// Caps one wheel's acceleration vector. Returns the realized vector and whether it slipped.
pub fn cap_wheel_accel(requested: [f64; 2], params: &SimParams) -> ([f64; 2], bool) {
    let norm = requested[0].hypot(requested[1]);
    if norm <= params.static_accel_limit {
        (requested, false)
    } else {
        let k = params.dynamic_accel_limit / norm;
        ([requested[0] * k, requested[1] * k], true)
    }
}

pub fn apply_friction(requested: &WheelAccels, params: &SimParams) -> FrictionOutcome {
    let ([front_lat, _], slip_front) = cap_wheel_accel([requested.front_lat, 0.0], params);
    let ([rear_lat, rear_long], slip_rear) =
        cap_wheel_accel([requested.rear_lat, requested.rear_long], params);
    FrictionOutcome {
        realized: WheelAccels {
            front_lat,
            rear_lat,
            rear_long,
        },
        slip: SlipFlags {
            front: slip_front,
            rear: slip_rear,
        },
    }
}

/// Number of inner steps covering `h`, or an error if `h` is not a multiple of `dt_sim`.
pub fn inner_step_count(h: f64, params: &SimParams) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step length must be > 0, got {h}")));
    }
    let k = (h / params.dt_sim).round();
    if k < 1.0 || (k * params.dt_sim - h).abs() > 1e-9 * h {
        return Err(Error::InvalidParameter(format!(
            "step length {h} is not a multiple of dt_sim {}",
            params.dt_sim
        )));
    }
    Ok(k as usize)
}

/// One semi-implicit inner step of length `dt_sim`.
pub(crate) fn inner_step(
    state: &SimState,
    control: &ControlInput,
    params: &SimParams,
) -> (SimState, FrictionOutcome) {
    let dt = params.dt_sim;
    let half = 0.5 * params.wheelbase;
    let requested = wheel_targets(state, control, params);
    let outcome = apply_friction(&requested, params);
    let a = outcome.realized;
    let (s, c) = wheel_angle(control, params).sin_cos();

    // half of the unit mass sits on each axle
    let f_front = [-0.5 * a.front_lat * s, 0.5 * a.front_lat * c];
    let f_rear = [0.5 * a.rear_long, 0.5 * a.rear_lat];
    let torque = half * f_front[1] - half * f_rear[1];
    let yaw_accel = torque / (half * half);

    let v = state.vel;
    let drag = params.drag_coeff;
    let vx = v.v_x + dt * (f_front[0] + f_rear[0] - drag * v.v_x);
    let vy = v.v_y + dt * (f_front[1] + f_rear[1] - drag * v.v_y);
    let omega = v.omega + dt * (yaw_accel - drag * v.omega);

    let heading = state.pose.heading;
    let (sh, ch) = heading.sin_cos();
    let x = state.pose.x + dt * (ch * vx - sh * vy);
    let y = state.pose.y + dt * (sh * vx + ch * vy);
    let turn = dt * omega;

    // the world-frame velocity is unchanged by re-expressing it in the turned body frame
    let (st, ct) = turn.sin_cos();
    let next = SimState::new(
        super::CarPose::new(x, y, heading + turn),
        super::BodyVelocity::new(ct * vx + st * vy, -st * vx + ct * vy, omega),
    );
    (next, outcome)
}

/// Advances by `h` seconds, also reporting whether either wheel slipped at any inner step.
pub fn step_with_slip(
    state: &SimState,
    control: &ControlInput,
    params: &SimParams,
    h: f64,
) -> Result<(SimState, SlipFlags)> {
    let count = inner_step_count(h, params)?;
    let mut current = *state;
    let mut slip = SlipFlags::default();
    for _ in 0..count {
        let (next, outcome) = inner_step(&current, control, params);
        current = next;
        slip = slip.merge(outcome.slip);
    }
    Ok((current, slip))
}

pub fn step(state: &SimState, control: &ControlInput, params: &SimParams, h: f64) -> Result<SimState> {
    step_with_slip(state, control, params, h).map(|(s, _)| s)
}

/// Plays `controls` from `x0`, returning `controls.len() + 1` states.
pub fn rollout_sim(
    x0: &SimState,
    controls: &[ControlInput],
    params: &SimParams,
    h: f64,
) -> Result<Vec<SimState>> {
    if controls.is_empty() {
        return Err(Error::InvalidParameter("control sequence is empty".into()));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for u in controls {
        let next = step(states.last().unwrap(), u, params, h)?;
        states.push(next);
    }
    Ok(states)
}
