use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cost::Objective;
use super::dynamics::{Control, ControlJacobian, Dynamics, State, StateJacobian};

/// Candidates per batched rollout in the line search; fixed so results do not
/// depend on the worker count.
const CANDIDATE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchSchedule {
    pub count: usize,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for LineSearchSchedule {
    fn default() -> Self {
        Self {
            count: 512,
            min_scale: 1e-6,
            max_scale: 1.0,
        }
    }
}

impl LineSearchSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.min_scale > 0.0) || !(self.min_scale <= self.max_scale) || !self.max_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "line search needs count >= 1 and 0 < min_scale <= max_scale, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Log-spaced step scales from `min_scale` to `max_scale`, both included.
    pub fn scales(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.max_scale];
        }
        let (lo, hi) = (self.min_scale.log10(), self.max_scale.log10());
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| match k {
                0 => self.min_scale,
                k if k == self.count - 1 => self.max_scale,
                k => 10f64.powf(lo + (hi - lo) * k as f64 / last),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    #[default]
    Analytic,
    #[serde(alias = "finite_difference")]
    Fd,
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(GradMode::Analytic),
            "fd" => Ok(GradMode::Fd),
            other => Err(Error::InvalidParameter(format!("unknown gradient mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub line_search: LineSearchSchedule,
    pub max_iterations: usize,
    /// Relative cost decrease below which an iteration counts as stalled.
    pub tolerance: f64,
    pub grad_mode: GradMode,
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            line_search: LineSearchSchedule::default(),
            max_iterations: 200,
            tolerance: 1e-6,
            grad_mode: GradMode::Analytic,
            fd_step: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.line_search.validate()?;
        if !(self.tolerance >= 0.0) || !(self.fd_step > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be >= 0 and fd_step > 0".into()));
        }
        Ok(())
    }
}

pub struct TrajOptProblem<'a> {
    pub dynamics: &'a dyn Dynamics,
    pub objective: &'a dyn Objective,
    pub z0: State,
    pub n: usize,
    pub config: OptimizerConfig,
}

impl<'a> TrajOptProblem<'a> {
    pub fn new(dynamics: &'a dyn Dynamics, objective: &'a dyn Objective, z0: State, n: usize) -> Self {
        Self {
            dynamics,
            objective,
            z0,
            n,
            config: OptimizerConfig::default(),
        }
    }

    pub fn with_config(mut self, config: OptimizerConfig) -> Self {
        self.config = config;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.dynamics.h() > 0.0) {
            return Err(Error::InvalidParameter("horizon must be >= 1 and h > 0".into()));
        }
        self.config.validate()
    }

    fn check_len(&self, u: &[Control]) -> Result<()> {
        if u.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "{} controls for a horizon of {}",
                u.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Rollout followed by the total cost; non-finite outcomes cost `+∞`.
    pub fn evaluate(&self, u: &[Control]) -> f64 {
        let z = rollout(self.dynamics, &self.z0, u);
        let l = self.objective.cost(&z, u);
        if l.is_finite() {
            l
        } else {
            f64::INFINITY
        }
    }
}

/// States `z_0..=z_n` under `u`.
pub fn rollout(dynamics: &dyn Dynamics, z0: &State, u: &[Control]) -> Vec<State> {
    let mut z = Vec::with_capacity(u.len() + 1);
    z.push(*z0);
    for ui in u {
        let next = dynamics.step(z.last().unwrap(), ui);
        z.push(next);
    }
    z
}

/// Lockstep rollout of many control sequences of equal length.
pub fn rollout_batch(dynamics: &dyn Dynamics, z0: &State, candidates: &[Vec<Control>]) -> Vec<Vec<State>> {
    let n = candidates.first().map_or(0, |c| c.len());
    let mut out: Vec<Vec<State>> = candidates
        .iter()
        .map(|_| {
            let mut v = Vec::with_capacity(n + 1);
            v.push(*z0);
            v
        })
        .collect();
    let mut us = Vec::with_capacity(candidates.len());
    for i in 0..n {
        let zs: Vec<State> = out.iter().map(|t| t[i]).collect();
        us.clear();
        us.extend(candidates.iter().map(|c| c[i]));
        for (traj, next) in out.iter_mut().zip(dynamics.step_batch(&zs, &us)) {
            traj.push(next);
        }
    }
    out
}

fn first_non_finite(z: &[State]) -> Option<usize> {
    z.iter().position(|s| s.iter().any(|x| !x.is_finite()))
}

/// Per-step `(A_i, B_i)` blocks along a rollout (`z` holds `n + 1` states).
pub fn residual_jacobians(dynamics: &dyn Dynamics, z: &[State], u: &[Control]) -> Vec<(StateJacobian, ControlJacobian)> {
    z.iter()
        .zip(u)
        .map(|(zi, ui)| {
            let (_, a, b) = dynamics.step_with_jacobians(zi, ui);
            (a, b)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEval {
    pub cost: f64,
    pub gradient: Vec<Control>,
    pub states: Vec<State>,
}

/// Total cost and `dl/du` by backward substitution through the step Jacobians.
pub fn cost_gradient(problem: &TrajOptProblem, u: &[Control]) -> Result<GradientEval> {
    problem.check_len(u)?;
    let dyn_ = problem.dynamics;
    let mut z = Vec::with_capacity(u.len() + 1);
    let mut blocks = Vec::with_capacity(u.len());
    z.push(problem.z0);
    for (i, ui) in u.iter().enumerate() {
        let (next, a, b) = dyn_.step_with_jacobians(&z[i], ui);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step: i + 1,
                what: "rolled-out state".into(),
            });
        }
        z.push(next);
        blocks.push((a, b));
    }
    let eval = problem.objective.cost_and_grad(&z, u);
    if !eval.value.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            what: "total cost".into(),
        });
    }

    let n = u.len();
    let mut grad = eval.du.clone();
    let mut lambda = eval.dz[n];
    for i in (0..n).rev() {
        let (a, b) = &blocks[i];
        for k in 0..2 {
            grad[i][k] += (0..6).map(|r| b[r][k] * lambda[r]).sum::<f64>();
        }
        if i > 0 {
            let mut next = eval.dz[i];
            for (c, v) in next.iter_mut().enumerate() {
                *v += (0..6).map(|r| a[r][c] * lambda[r]).sum::<f64>();
            }
            lambda = next;
        }
    }
    if let Some(i) = grad.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite {
            step: i,
            what: "cost gradient".into(),
        });
    }
    Ok(GradientEval {
        cost: eval.value,
        gradient: grad,
        states: z,
    })
}

/// Central finite differences of the total cost over every control entry.
pub fn fd_cost_gradient(problem: &TrajOptProblem, u: &[Control], step: f64) -> Result<GradientEval> {
    problem.check_len(u)?;
    let z = rollout(problem.dynamics, &problem.z0, u);
    if let Some(i) = first_non_finite(&z) {
        return Err(Error::NonFinite {
            step: i,
            what: "rolled-out state".into(),
        });
    }
    let cost = problem.objective.cost(&z, u);
    let flat: Vec<f64> = (0..2 * u.len())
        .into_par_iter()
        .map(|e| {
            let (i, k) = (e / 2, e % 2);
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[i][k] += step;
            um[i][k] -= step;
            let lp = problem.objective.cost(&rollout(problem.dynamics, &problem.z0, &up), &up);
            let lm = problem.objective.cost(&rollout(problem.dynamics, &problem.z0, &um), &um);
            (lp - lm) / (2.0 * step)
        })
        .collect();
    let gradient: Vec<Control> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    if let Some(i) = gradient.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite {
            step: i,
            what: "finite-difference gradient".into(),
        });
    }
    Ok(GradientEval {
        cost,
        gradient,
        states: z,
    })
}

pub fn gradient(problem: &TrajOptProblem, u: &[Control]) -> Result<GradientEval> {
    match problem.config.grad_mode {
        GradMode::Analytic => cost_gradient(problem, u),
        GradMode::Fd => fd_cost_gradient(problem, u, problem.config.fd_step),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedStep {
    pub controls: Vec<Control>,
    pub cost: f64,
    pub alpha: f64,
    pub index: usize,
}

fn candidate(u: &[Control], g: &[Control], alpha: f64) -> Vec<Control> {
    u.iter()
        .zip(g)
        .map(|(ui, gi)| [ui[0] - alpha * gi[0], ui[1] - alpha * gi[1]])
        .collect()
}

/// Costs of `u − α_k·g` for every scale, in schedule order.
pub fn candidate_costs(problem: &TrajOptProblem, u: &[Control], g: &[Control], scales: &[f64]) -> Vec<f64> {
    scales
        .par_chunks(CANDIDATE_CHUNK)
        .flat_map_iter(|chunk| {
            let cands: Vec<Vec<Control>> = chunk.iter().map(|&a| candidate(u, g, a)).collect();
            let trajs = rollout_batch(problem.dynamics, &problem.z0, &cands);
            cands
                .into_iter()
                .zip(trajs)
                .map(|(c, z)| {
                    let l = problem.objective.cost(&z, &c);
                    if l.is_finite() {
                        l
                    } else {
                        f64::INFINITY
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Best strictly improving candidate, ties going to the smallest scale.
pub fn line_search(problem: &TrajOptProblem, u: &[Control], g: &[Control], l_current: f64) -> Option<AcceptedStep> {
    if g.iter().all(|gi| gi[0] == 0.0 && gi[1] == 0.0) {
        return None;
    }
    let scales = problem.config.line_search.scales();
    let costs = candidate_costs(problem, u, g, &scales);
    let mut best: Option<usize> = None;
    for (k, &c) in costs.iter().enumerate() {
        if c < l_current && best.is_none_or(|b| c < costs[b]) {
            best = Some(k);
        }
    }
    let index = best?;
    let alpha = scales[index];
    let controls = candidate(u, g, alpha);
    // re-evaluate on the unbatched path the rest of the optimizer uses
    let cost = problem.evaluate(&controls);
    (cost < l_current).then_some(AcceptedStep {
        controls,
        cost,
        alpha,
        index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoImprovement,
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajOptResult {
    pub controls: Vec<Control>,
    /// `z_0..=z_n` under the final controls.
    pub states: Vec<State>,
    /// Cost at the initial controls followed by every accepted cost.
    pub cost_history: Vec<f64>,
    pub alpha_history: Vec<f64>,
    /// Gradient evaluated at the initial controls, when any iteration ran.
    pub first_gradient: Option<Vec<Control>>,
    pub iterations: usize,
    pub termination: Termination,
}

impl TrajOptResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().unwrap()
    }
}

/// Gradient steps with the batched line search until no step helps, progress stalls
/// for three iterations, or the iteration budget runs out.
pub fn optimize(problem: &TrajOptProblem, u_init: &[Control]) -> Result<TrajOptResult> {
    problem.validate()?;
    problem.check_len(u_init)?;
    let mut u = u_init.to_vec();
    let z = rollout(problem.dynamics, &problem.z0, &u);
    if let Some(i) = first_non_finite(&z) {
        return Err(Error::NonFinite {
            step: i,
            what: "rolled-out state".into(),
        });
    }
    let mut l = problem.objective.cost(&z, &u);
    if !l.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            what: "initial cost".into(),
        });
    }
    let mut result = TrajOptResult {
        controls: Vec::new(),
        states: Vec::new(),
        cost_history: vec![l],
        alpha_history: Vec::new(),
        first_gradient: None,
        iterations: 0,
        termination: Termination::MaxIterations,
    };
    let mut stalled = 0;
    while result.iterations < problem.config.max_iterations {
        result.iterations += 1;
        let eval = gradient(problem, &u)?;
        if result.first_gradient.is_none() {
            result.first_gradient = Some(eval.gradient.clone());
        }
        let Some(step) = line_search(problem, &u, &eval.gradient, l) else {
            result.termination = Termination::NoImprovement;
            break;
        };
        assert!(step.cost < l, "line search accepted a non-improving step");
        let rel = (l - step.cost) / l.abs().max(f64::MIN_POSITIVE);
        u = step.controls;
        l = step.cost;
        result.cost_history.push(l);
        result.alpha_history.push(step.alpha);
        stalled = if rel < problem.config.tolerance { stalled + 1 } else { 0 };
        if stalled >= 3 {
            result.termination = Termination::Converged;
            break;
        }
    }
    result.states = rollout(problem.dynamics, &problem.z0, &u);
    result.controls = u;
    Ok(result)
}
