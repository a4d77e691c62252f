use crate::car_sim::{self, inner_step_count, ControlInput, SimParams, SimState};
use crate::error::Result;
use crate::geometry::{normalize_angle, wrap_angle_diff};
use crate::mlp::MlpModel;

/// Augmented state `(x, y, heading, v_x, v_y, ω)`.
pub type State = [f64; 6];
/// Raw `(throttle, steer)`; bounds are enforced softly by the cost, not here.
pub type Control = [f64; 2];
/// Row-major `∂z_{i+1}/∂z_i`.
pub type StateJacobian = [[f64; 6]; 6];
/// Row-major `∂z_{i+1}/∂u_i`.
pub type ControlJacobian = [[f64; 2]; 6];

pub fn state_from(pose: [f64; 3], vel: [f64; 3]) -> State {
    [pose[0], pose[1], pose[2], vel[0], vel[1], vel[2]]
}

pub fn pose_of(z: &State) -> [f64; 3] {
    [z[0], z[1], z[2]]
}

pub fn vel_of(z: &State) -> [f64; 3] {
    [z[3], z[4], z[5]]
}

/// One-step transition of the augmented state with its Jacobians.
pub trait Dynamics: Sync {
    fn h(&self) -> f64;

    fn step(&self, z: &State, u: &Control) -> State;

    fn step_with_jacobians(&self, z: &State, u: &Control) -> (State, StateJacobian, ControlJacobian);

    /// Steps many independent states; implementations may batch the work.
    fn step_batch(&self, z: &[State], u: &[Control]) -> Vec<State> {
        z.iter().zip(u).map(|(z, u)| self.step(z, u)).collect()
    }
}

/// Predicts the next local velocity from the current one and a control.
pub trait VelocityModel: Sync {
    fn predict(&self, v: &[f64; 3], u: &Control) -> [f64; 3];

    /// Prediction and its 3×5 Jacobian with respect to `(v, u)`.
    fn predict_with_jacobian(&self, v: &[f64; 3], u: &Control) -> ([f64; 3], [[f64; 5]; 3]);

    fn predict_batch(&self, inputs: &[[f64; 5]]) -> Vec<[f64; 3]> {
        inputs
            .iter()
            .map(|x| self.predict(&[x[0], x[1], x[2]], &[x[3], x[4]]))
            .collect()
    }
}

impl<M: VelocityModel + ?Sized> VelocityModel for &M {
    fn predict(&self, v: &[f64; 3], u: &Control) -> [f64; 3] {
        (**self).predict(v, u)
    }

    fn predict_with_jacobian(&self, v: &[f64; 3], u: &Control) -> ([f64; 3], [[f64; 5]; 3]) {
        (**self).predict_with_jacobian(v, u)
    }

    fn predict_batch(&self, inputs: &[[f64; 5]]) -> Vec<[f64; 3]> {
        (**self).predict_batch(inputs)
    }
}

impl VelocityModel for MlpModel {
    fn predict(&self, v: &[f64; 3], u: &Control) -> [f64; 3] {
        self.forward_raw(&[v[0], v[1], v[2], u[0], u[1]])
    }

    fn predict_with_jacobian(&self, v: &[f64; 3], u: &Control) -> ([f64; 3], [[f64; 5]; 3]) {
        self.forward_with_jacobian(&[v[0], v[1], v[2], u[0], u[1]])
    }

    fn predict_batch(&self, inputs: &[[f64; 5]]) -> Vec<[f64; 3]> {
        self.forward_batch(inputs)
    }
}

/// Returns its input velocity unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl VelocityModel for ConstantVelocity {
    fn predict(&self, v: &[f64; 3], _u: &Control) -> [f64; 3] {
        *v
    }

    fn predict_with_jacobian(&self, v: &[f64; 3], _u: &Control) -> ([f64; 3], [[f64; 5]; 3]) {
        let mut j = [[0.0; 5]; 3];
        for (k, row) in j.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        (*v, j)
    }
}

/// Always predicts a standstill.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl VelocityModel for ZeroVelocity {
    fn predict(&self, _v: &[f64; 3], _u: &Control) -> [f64; 3] {
        [0.0; 3]
    }

    fn predict_with_jacobian(&self, _v: &[f64; 3], _u: &Control) -> ([f64; 3], [[f64; 5]; 3]) {
        ([0.0; 3], [[0.0; 5]; 3])
    }
}

/// `v' = M v + N u + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearVelocity {
    pub m: [[f64; 3]; 3],
    pub n: [[f64; 2]; 3],
    pub c: [f64; 3],
}

impl VelocityModel for LinearVelocity {
    fn predict(&self, v: &[f64; 3], u: &Control) -> [f64; 3] {
        std::array::from_fn(|r| {
            self.c[r]
                + (0..3).map(|k| self.m[r][k] * v[k]).sum::<f64>()
                + (0..2).map(|k| self.n[r][k] * u[k]).sum::<f64>()
        })
    }

    fn predict_with_jacobian(&self, v: &[f64; 3], u: &Control) -> ([f64; 3], [[f64; 5]; 3]) {
        let j = std::array::from_fn(|r| {
            let (m, n) = (self.m[r], self.n[r]);
            [m[0], m[1], m[2], n[0], n[1]]
        });
        (self.predict(v, u), j)
    }
}

/// Learned transition: `v' = f(v, u)`, then the pose moves by `h·R(heading)·v'`.
#[derive(Debug, Clone)]
pub struct LearnedDynamics<M> {
    pub model: M,
    pub h: f64,
}

impl<M> LearnedDynamics<M> {
    pub fn new(model: M, h: f64) -> Self {
        Self { model, h }
    }
}

#[inline]
fn advance_pose(z: &State, v: &[f64; 3], h: f64) -> State {
    let (s, c) = z[2].sin_cos();
    [
        z[0] + h * (c * v[0] - s * v[1]),
        z[1] + h * (s * v[0] + c * v[1]),
        normalize_angle(z[2] + h * v[2]),
        v[0],
        v[1],
        v[2],
    ]
}

impl<M: VelocityModel> Dynamics for LearnedDynamics<M> {
    fn h(&self) -> f64 {
        self.h
    }

    fn step(&self, z: &State, u: &Control) -> State {
        advance_pose(z, &self.model.predict(&vel_of(z), u), self.h)
    }

    fn step_with_jacobians(&self, z: &State, u: &Control) -> (State, StateJacobian, ControlJacobian) {
        let h = self.h;
        let (v, jf) = self.model.predict_with_jacobian(&vel_of(z), u);
        let next = advance_pose(z, &v, h);
        let (s, c) = z[2].sin_cos();
        // ∂pose'/∂v' for the rotation evaluated at the current heading
        let p = [[h * c, -h * s, 0.0], [h * s, h * c, 0.0], [0.0, 0.0, h]];

        let mut a = [[0.0; 6]; 6];
        let mut b = [[0.0; 2]; 6];
        for (k, row) in a.iter_mut().enumerate().take(3) {
            row[k] = 1.0;
        }
        a[0][2] = -h * (s * v[0] + c * v[1]);
        a[1][2] = h * (c * v[0] - s * v[1]);
        for r in 0..3 {
            for col in 0..5 {
                let pose_row: f64 = (0..3).map(|k| p[r][k] * jf[k][col]).sum();
                if col < 3 {
                    a[r][3 + col] = pose_row;
                    a[3 + r][3 + col] = jf[r][col];
                } else {
                    b[r][col - 3] = pose_row;
                    b[3 + r][col - 3] = jf[r][col];
                }
            }
        }
        (next, a, b)
    }

    fn step_batch(&self, z: &[State], u: &[Control]) -> Vec<State> {
        let inputs: Vec<[f64; 5]> = z
            .iter()
            .zip(u)
            .map(|(z, u)| [z[3], z[4], z[5], u[0], u[1]])
            .collect();
        self.model
            .predict_batch(&inputs)
            .iter()
            .zip(z)
            .map(|(v, z)| advance_pose(z, v, self.h))
            .collect()
    }
}

/// The simulator itself as the transition, with finite-difference Jacobians.
#[derive(Debug, Clone)]
pub struct SimDynamics {
    params: SimParams,
    h: f64,
    fd_step: f64,
}

impl SimDynamics {
    pub fn new(params: SimParams, h: f64) -> Result<Self> {
        params.validate()?;
        inner_step_count(h, &params)?;
        Ok(Self {
            params,
            h,
            fd_step: 1e-6,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }
}

impl Dynamics for SimDynamics {
    fn h(&self) -> f64 {
        self.h
    }

    fn step(&self, z: &State, u: &Control) -> State {
        car_sim::step(&SimState::from_array(*z), &ControlInput::from(*u), &self.params, self.h)
            .expect("step size validated at construction")
            .to_array()
    }

    fn step_with_jacobians(&self, z: &State, u: &Control) -> (State, StateJacobian, ControlJacobian) {
        let next = self.step(z, u);
        let e = self.fd_step;
        // One-sided slopes on both sides; where a friction switch makes them disagree,
        // the smaller one is the derivative of the regime the state is in.
        let column = |plus: State, minus: State| -> [f64; 6] {
            let diff = |a: &State, b: &State, r: usize| {
                if r == 2 {
                    wrap_angle_diff(a[2], b[2])
                } else {
                    a[r] - b[r]
                }
            };
            let fwd: [f64; 6] = std::array::from_fn(|r| diff(&plus, &next, r) / e);
            let bwd: [f64; 6] = std::array::from_fn(|r| diff(&next, &minus, r) / e);
            let norm = |d: &[f64; 6]| d.iter().map(|x| x.abs()).sum::<f64>();
            let gap: f64 = fwd.iter().zip(&bwd).map(|(f, b)| (f - b).abs()).sum();
            if gap > 1e-2 * (1.0 + norm(&fwd) + norm(&bwd)) {
                if norm(&fwd) <= norm(&bwd) {
                    fwd
                } else {
                    bwd
                }
            } else {
                std::array::from_fn(|r| 0.5 * (fwd[r] + bwd[r]))
            }
        };
        let mut a = [[0.0; 6]; 6];
        for col in 0..6 {
            let (mut zp, mut zm) = (*z, *z);
            zp[col] += e;
            zm[col] -= e;
            let d = column(self.step(&zp, u), self.step(&zm, u));
            for r in 0..6 {
                a[r][col] = d[r];
            }
        }
        let mut b = [[0.0; 2]; 6];
        for col in 0..2 {
            let (mut up, mut um) = (*u, *u);
            up[col] += e;
            um[col] -= e;
            let d = column(self.step(z, &up), self.step(z, &um));
            for r in 0..6 {
                b[r][col] = d[r];
            }
        }
        (next, a, b)
    }
}
