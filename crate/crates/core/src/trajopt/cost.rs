use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle_diff;

use super::dynamics::{Control, State};

/// One-sided quadratic barrier `s²` for `s > 0`, with its derivative.
#[inline]
pub fn barrier(s: f64) -> (f64, f64) {
    if s > 0.0 {
        (s * s, 2.0 * s)
    } else {
        (0.0, 0.0)
    }
}

/// Cost value with partials; `dz[i]` belongs to state `i` (entry 0 is the fixed start).
#[derive(Debug, Clone, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub dz: Vec<State>,
    pub du: Vec<Control>,
}

impl CostEval {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            dz: vec![[0.0; 6]; n + 1],
            du: vec![[0.0; 2]; n],
        }
    }
}

/// A scalar trajectory cost over `n + 1` states and `n` controls.
pub trait Objective: Sync {
    fn cost(&self, z: &[State], u: &[Control]) -> f64 {
        self.cost_and_grad(z, u).value
    }

    fn cost_and_grad(&self, z: &[State], u: &[Control]) -> CostEval;
}

/// Control magnitude and smoothness penalties plus soft box limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlRegularizer {
    pub w_reg_mag: f64,
    pub w_reg_smooth: f64,
    pub w_limits: f64,
    pub u_lower: [f64; 2],
    pub u_upper: [f64; 2],
}

impl Default for ControlRegularizer {
    fn default() -> Self {
        Self {
            w_reg_mag: 1e-3,
            w_reg_smooth: 1e-2,
            w_limits: 10.0,
            u_lower: [-1.0, -1.0],
            u_upper: [1.0, 1.0],
        }
    }
}

impl ControlRegularizer {
    pub fn none() -> Self {
        Self {
            w_reg_mag: 0.0,
            w_reg_smooth: 0.0,
            w_limits: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_reg_mag, self.w_reg_smooth, self.w_limits];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("cost weights must be finite and nonnegative".into()));
        }
        if !(0..2).all(|k| self.u_lower[k] < self.u_upper[k]) {
            return Err(Error::InvalidParameter(format!(
                "control bounds need lower < upper, got {:?} / {:?}",
                self.u_lower, self.u_upper
            )));
        }
        Ok(())
    }

    /// Adds the penalty to `du` and returns its value.
    pub fn accumulate(&self, u: &[Control], du: &mut [Control]) -> f64 {
        let mut total = 0.0;
        for (i, ui) in u.iter().enumerate() {
            for k in 0..2 {
                total += self.w_reg_mag * ui[k] * ui[k];
                du[i][k] += 2.0 * self.w_reg_mag * ui[k];
                if self.w_limits > 0.0 {
                    let (lo, dlo) = barrier(self.u_lower[k] - ui[k]);
                    let (hi, dhi) = barrier(ui[k] - self.u_upper[k]);
                    total += self.w_limits * (lo + hi);
                    du[i][k] += self.w_limits * (dhi - dlo);
                }
                if i > 0 {
                    let d = ui[k] - u[i - 1][k];
                    total += self.w_reg_smooth * d * d;
                    du[i][k] += 2.0 * self.w_reg_smooth * d;
                    du[i - 1][k] -= 2.0 * self.w_reg_smooth * d;
                }
            }
        }
        total
    }

    pub fn value(&self, u: &[Control]) -> f64 {
        let mut scratch = vec![[0.0; 2]; u.len()];
        self.accumulate(u, &mut scratch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Index of the targeted state, `1..=n`.
    pub step: usize,
    /// `[x, y, heading]` in world coordinates.
    pub pose: [f64; 3],
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// Pose targets plus control regularization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSpec {
    pub targets: Vec<TargetSpec>,
    #[serde(flatten)]
    pub regularizer: ControlRegularizer,
}

impl CostSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.regularizer.validate()?;
        for t in &self.targets {
            if t.step == 0 || t.step > n {
                return Err(Error::InvalidParameter(format!(
                    "target step {} outside 1..={n}",
                    t.step
                )));
            }
            if !(t.weight >= 0.0) || t.pose.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("invalid target at step {}", t.step)));
            }
        }
        Ok(())
    }

    fn pose_error(t: &TargetSpec, z: &State) -> [f64; 3] {
        [
            z[0] - t.pose[0],
            z[1] - t.pose[1],
            wrap_angle_diff(z[2], t.pose[2]),
        ]
    }

    /// The target term alone.
    pub fn target_cost(&self, z: &[State]) -> f64 {
        self.targets
            .iter()
            .map(|t| t.weight * Self::pose_error(t, &z[t.step]).iter().map(|e| e * e).sum::<f64>())
            .sum()
    }
}

impl Objective for CostSpec {
    fn cost_and_grad(&self, z: &[State], u: &[Control]) -> CostEval {
        let mut out = CostEval::zeros(u.len());
        for t in &self.targets {
            let e = Self::pose_error(t, &z[t.step]);
            for k in 0..3 {
                out.value += t.weight * e[k] * e[k];
                out.dz[t.step][k] += 2.0 * t.weight * e[k];
            }
        }
        out.value += self.regularizer.accumulate(u, &mut out.du);
        out
    }
}
