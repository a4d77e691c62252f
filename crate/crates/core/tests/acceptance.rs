//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use driftopt::car_sim::{
    apply_friction, collect_dataset, step_with_slip, wheel_targets, BodyVelocity, CarPose, ControlInput,
    SimParams, SimState,
};
use driftopt::dataset::{split_dataset, SplitConfig, SplitDataset};
use driftopt::mlp::{
    loss_value_and_grad, smooth_losses, train, Activation, LossKind, MlpModel, MlpSpec, Normalizer, TrainConfig,
    TrainHistory,
};
use driftopt::mpc::{run_closed_loop, MpcConfig, Track};
use driftopt::selection::{run_selection, tve, ComparisonConfig, GridConfig, SelectionConfig, SmoothnessConfig};
use driftopt::trajopt::{
    cost_gradient, fd_cost_gradient, line_search, optimize, rollout, Control, ControlRegularizer, CostEval,
    CostSpec, LearnedDynamics, LineSearchSchedule, Objective, Scenario, SimDynamics, State, TargetSpec,
    TrajOptProblem, TrajOptResult, ZeroVelocity,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const H: f64 = 0.05;
const SEED: u64 = 7;
/// ≈ 44 minutes of driving: 47'518 training pairs at a 0.9 / 0.05 split.
const COLLECT_SECONDS: f64 = 2640.0;
const EPOCHS: usize = 100;
const SMOOTHING_WINDOW: usize = 5;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn strictly_decreasing(r: &TrajOptResult) -> Result<(), String> {
    match r.cost_history.windows(2).position(|w| !(w[1] < w[0])) {
        None => Ok(()),
        Some(i) => Err(format!("accepted cost rose at iteration {}", i + 1)),
    }
}

// ---------- 1: adjoint gradient against a dense implicit solve and finite differences

fn seeded_gelu(hidden: usize, width: usize, seed: u64) -> MlpModel {
    let mut m = MlpModel::initialized(MlpSpec::uniform(hidden, width, Activation::Gelu, seed).unwrap()).unwrap();
    m.normalizer = Normalizer {
        input_mean: [1.0, 0.0, 0.0, 0.2, 0.0],
        input_scale: [1.2, 0.3, 1.5, 0.5, 0.5],
        output_mean: [0.0; 3],
        output_scale: [1.2, 0.3, 1.5],
    };
    m
}

/// Transition blocks written out by hand: v' = f(v, u), pose' = pose + h R(θ) v'.
fn hand_blocks(m: &MlpModel, z: &State, u: &Control) -> ([[f64; 6]; 6], [[f64; 2]; 6]) {
    let v = BodyVelocity::new(z[3], z[4], z[5]);
    let c = ControlInput::new(u[0], u[1]);
    let vn = m.forward(&v, &c).to_array();
    let j = m.input_jacobian(&v, &c);
    let (s, co) = z[2].sin_cos();
    let rot = [[co, -s, 0.0], [s, co, 0.0], [0.0, 0.0, 1.0]];
    let mut a = [[0.0; 6]; 6];
    let mut b = [[0.0; 2]; 6];
    for r in 0..3 {
        a[r][r] = 1.0;
        for k in 0..3 {
            for q in 0..3 {
                a[r][3 + k] += H * rot[r][q] * j[q][k];
            }
            a[3 + r][3 + k] = j[r][k];
        }
        for k in 0..2 {
            for q in 0..3 {
                b[r][k] += H * rot[r][q] * j[q][3 + k];
            }
            b[3 + r][k] = j[r][3 + k];
        }
    }
    a[0][2] += H * (-s * vn[0] - co * vn[1]);
    a[1][2] += H * (co * vn[0] - s * vn[1]);
    (a, b)
}

fn dense_gradient(m: &MlpModel, cost: &CostSpec, z0: &State, u: &[Control]) -> Vec<f64> {
    let n = u.len();
    let d = LearnedDynamics::new(m, H);
    let z = rollout(&d, z0, u);
    let mut gz = DMatrix::<f64>::identity(6 * n, 6 * n);
    let mut gu = DMatrix::<f64>::zeros(6 * n, 2 * n);
    for i in 0..n {
        let (a, b) = hand_blocks(m, &z[i], &u[i]);
        for r in 0..6 {
            if i > 0 {
                for c in 0..6 {
                    gz[(6 * i + r, 6 * (i - 1) + c)] = -a[r][c];
                }
            }
            for c in 0..2 {
                gu[(6 * i + r, 2 * i + c)] = -b[r][c];
            }
        }
    }
    let dzdu = -gz.lu().solve(&gu).unwrap();
    let CostEval { dz, du, .. } = cost.cost_and_grad(&z, u);
    let lz = DMatrix::from_iterator(1, 6 * n, dz[1..].iter().flatten().copied());
    let total = lz * dzdu;
    (0..2 * n).map(|k| total[k] + du[k / 2][k % 2]).collect()
}

fn criterion_1() -> Outcome {
    let m = seeded_gelu(8, 64, 21);
    let n = 10;
    let cost = CostSpec {
        targets: vec![TargetSpec {
            step: n,
            pose: [0.8, 0.3, 0.5],
            weight: 1.0,
        }],
        regularizer: ControlRegularizer::default(),
    };
    let z0 = [0.0, 0.0, 0.2, 1.0, 0.05, 0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let u: Vec<Control> = (0..n).map(|_| [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)]).collect();
    let d = LearnedDynamics::new(&m, H);
    let problem = TrajOptProblem::new(&d, &cost, z0, n);
    let adjoint: Vec<f64> = cost_gradient(&problem, &u).map_err(|e| e.to_string())?.gradient.concat();
    let dense = dense_gradient(&m, &cost, &z0, &u);
    let max_abs = adjoint.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(max_abs <= 1e-10, "dense implicit solve differs by {max_abs:e}");

    let fd: Vec<f64> = fd_cost_gradient(&problem, &u, 1e-5).map_err(|e| e.to_string())?.gradient.concat();
    // entries far below the gradient's scale are compared against 1e-3 of that scale
    let scale = fd.iter().fold(0.0f64, |s, g| s.max(g.abs()));
    let max_rel = adjoint
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3 * scale))
        .fold(0.0, f64::max);
    ensure!(max_rel <= 1e-4, "finite differences differ by {max_rel:e} relative");
    Ok(format!("dense max abs {max_abs:.1e}, fd max rel {max_rel:.1e}"))
}

// ---------- 2: network input Jacobian

fn fd_jacobian(m: &MlpModel, x: &[f64; 5], step: f64) -> [[f64; 5]; 3] {
    let mut j = [[0.0; 5]; 3];
    for c in 0..5 {
        let (mut p, mut q) = (*x, *x);
        p[c] += step;
        q[c] -= step;
        let (yp, yq) = (m.forward_raw(&p), m.forward_raw(&q));
        for r in 0..3 {
            j[r][c] = (yp[r] - yq[r]) / (2.0 * step);
        }
    }
    j
}

fn jacobian_rel_err(a: &[[f64; 5]; 3], b: &[[f64; 5]; 3]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-12);
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-3 * scale))
        .fold(0.0, f64::max)
}

/// Smallest |pre-activation| over all hidden units, computed with plain loops.
fn min_hidden_preactivation(m: &MlpModel, x: &[f64; 5]) -> f64 {
    let n = &m.normalizer;
    let mut a: Vec<f64> = (0..5).map(|k| (x[k] - n.input_mean[k]) / n.input_scale[k]).collect();
    let mut smallest = f64::INFINITY;
    for layer in &m.layers[..m.layers.len() - 1] {
        let z: Vec<f64> = (0..layer.weights.nrows())
            .map(|r| layer.bias[r] + (0..a.len()).map(|c| layer.weights[(r, c)] * a[c]).sum::<f64>())
            .collect();
        smallest = z.iter().fold(smallest, |s, v| s.min(v.abs()));
        a = z.iter().map(|v| v.max(0.0)).collect();
    }
    smallest
}

fn random_input(rng: &mut ChaCha8Rng) -> [f64; 5] {
    [
        rng.random_range(-1.0..3.0),
        rng.random_range(-0.5..0.5),
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ]
}

fn criterion_2() -> Outcome {
    let gelu = seeded_gelu(8, 64, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut worst_gelu = 0.0f64;
    for _ in 0..100 {
        let x = random_input(&mut rng);
        let (_, j) = gelu.forward_with_jacobian(&x);
        worst_gelu = worst_gelu.max(jacobian_rel_err(&j, &fd_jacobian(&gelu, &x, 1e-5)));
    }
    ensure!(worst_gelu < 1e-5, "GELU Jacobian off by {worst_gelu:e} relative");

    let relu = MlpModel::initialized(MlpSpec::uniform(8, 64, Activation::Relu, 33).unwrap()).unwrap();
    let (mut worst_relu, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < 100 {
        let x = random_input(&mut rng);
        // FD step 1e-7 moves each pre-activation by far less than 1e-4
        if min_hidden_preactivation(&relu, &x) < 1e-4 {
            skipped += 1;
            continue;
        }
        let (_, j) = relu.forward_with_jacobian(&x);
        worst_relu = worst_relu.max(jacobian_rel_err(&j, &fd_jacobian(&relu, &x, 1e-7)));
        checked += 1;
    }
    ensure!(worst_relu < 1e-5, "ReLU Jacobian off by {worst_relu:e} relative");
    Ok(format!("GELU max rel {worst_gelu:.1e}, ReLU max rel {worst_relu:.1e} ({skipped} near-kink points skipped)"))
}

// ---------- 3: loss formulas

fn criterion_3() -> Outcome {
    let truth = [1.0, -1.0, 2.0];
    for kind in LossKind::ALL {
        let (l, g) = loss_value_and_grad(kind, 1e-3, &truth, &truth);
        ensure!(l == 0.0 && g == [0.0; 3], "{} nonzero at exact prediction", kind.name());
    }
    let (a, _) = loss_value_and_grad(LossKind::Relative, 1e-3, &[0.001, 0.0, 0.0], &[0.0; 3]);
    ensure!((a - 1.0).abs() < 1e-12, "zero-truth example gave {a}");
    let (b, _) = loss_value_and_grad(LossKind::Relative, 1e-3, &[1.0, -1.0, 0.0], &truth);
    ensure!((b - 2.0 / 4.001).abs() < 1e-12, "(1,-1,2) example gave {b}");
    Ok(format!("examples 0, {a}, {b:.5}"))
}

// ---------- 4: line-search contract

struct FirstEntrySquared;

impl Objective for FirstEntrySquared {
    fn cost_and_grad(&self, _z: &[State], u: &[Control]) -> CostEval {
        let mut e = CostEval::zeros(u.len());
        e.value = u[0][0] * u[0][0];
        e.du[0][0] = 2.0 * u[0][0];
        e
    }
}

fn criterion_4() -> Outcome {
    let schedule = LineSearchSchedule::default();
    let scales = schedule.scales();
    ensure!(scales.len() == 512, "{} candidates", scales.len());
    ensure!(scales[0] == 1e-6 && scales[511] == 1.0, "range [{}, {}]", scales[0], scales[511]);
    let ratio = (1e6f64).powf(1.0 / 511.0);
    ensure!(
        scales.windows(2).all(|w| (w[1] / w[0] / ratio - 1.0).abs() < 1e-9),
        "candidates are not log-spaced"
    );

    let d = LearnedDynamics::new(ZeroVelocity, H);
    let problem = TrajOptProblem::new(&d, &FirstEntrySquared, [0.0; 6], 1);
    let u = [[1.0, 0.0]];
    let g = cost_gradient(&problem, &u).map_err(|e| e.to_string())?;
    ensure!(g.cost == 1.0, "initial cost {}", g.cost);
    let step = line_search(&problem, &u, &g.gradient, g.cost).ok_or("no step accepted on the surrogate")?;
    ensure!(step.cost < 0.01, "accepted cost {}", step.cost);
    ensure!(line_search(&problem, &u, &[[0.0, 0.0]], 1.0).is_none(), "zero gradient was not rejected");
    let r = optimize(&problem, &u).map_err(|e| e.to_string())?;
    strictly_decreasing(&r)?;
    Ok(format!("surrogate accepted cost {:.2e} at scale {:.4}", step.cost, step.alpha))
}

// ---------- 5: simulator physics

fn criterion_5() -> Outcome {
    let p = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for k in 0..10_000 {
        let s = SimState::new(
            CarPose::default(),
            BodyVelocity::new(rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0), rng.random_range(-8.0..8.0)),
        );
        let u = ControlInput::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let out = apply_friction(&wheel_targets(&s, &u, &p), &p);
        let front = out.realized.front_lat.abs();
        let rear = out.realized.rear_lat.hypot(out.realized.rear_long);
        ensure!(front <= p.static_accel_limit + 1e-12 && rear <= p.static_accel_limit + 1e-12, "cap broken at sample {k}");
        ensure!(!out.slip.front || (front - p.dynamic_accel_limit).abs() < 1e-9, "front slip not at dynamic limit");
        ensure!(!out.slip.rear || (rear - p.dynamic_accel_limit).abs() < 1e-9, "rear slip not at dynamic limit");
    }

    // straight line: v' = a − c v with a = drive_gain·throttle / 2 (half the mass on the rear axle)
    let (throttle, c) = (0.3, p.drag_coeff);
    let a = 0.5 * p.drive_gain * throttle;
    let mut s = SimState::default();
    let mut tol = 0.0;
    let mut worst_straight = 0.0f64;
    for k in 1..=60 {
        let (next, slip) = step_with_slip(&s, &ControlInput::new(throttle, 0.0), &p, H).map_err(|e| e.to_string())?;
        ensure!(!slip.any(), "straight run slipped");
        s = next;
        let t = k as f64 * H;
        let v = a / c * (1.0 - (-c * t).exp());
        let x = a / c * (t - (1.0 - (-c * t).exp()) / c);
        tol += 10.0 * p.dt_sim * v.max(0.1);
        let err = (s.pose.x - x).hypot(s.pose.y);
        ensure!(err <= tol, "straight step {k}: error {err:e} > {tol:e}");
        worst_straight = worst_straight.max(err / tol);
    }

    // 0.1 rad wheel angle against a kinematic bicycle fed the same forward speed
    let wheel = 0.1;
    let u = ControlInput::new(0.3, wheel / p.steer_gain);
    let mut s = SimState::default();
    let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
    let mut tol = 0.0;
    let mut worst_turn = 0.0f64;
    for k in 0..60 {
        let (next, slip) = step_with_slip(&s, &u, &p, H).map_err(|e| e.to_string())?;
        ensure!(!slip.any(), "gentle turn slipped");
        let (v0, v1) = (s.vel.v_x, next.vel.v_x);
        s = next;
        let sub = 48;
        for j in 0..sub {
            let v = v0 + (j as f64 + 0.5) / sub as f64 * (v1 - v0);
            let dt = H / sub as f64;
            let omega = v * wheel.tan() / p.wheelbase;
            let mid = th + 0.5 * dt * omega;
            let vy = 0.5 * v * wheel.tan();
            x += dt * (mid.cos() * v - mid.sin() * vy);
            y += dt * (mid.sin() * v + mid.cos() * vy);
            th += dt * omega;
        }
        tol += 10.0 * p.dt_sim * v1.max(0.1);
        let err = (s.pose.x - x).hypot(s.pose.y - y);
        ensure!(err <= tol, "turn step {}: error {err:e} > {tol:e}", k + 1);
        worst_turn = worst_turn.max(err / tol);
    }

    let mut s = SimState::new(CarPose::default(), BodyVelocity::new(3.0, 0.0, 0.0));
    let full = ControlInput::new(0.0, 1.0);
    let mut max_vy = 0.0f64;
    for k in 0..10 {
        let next = driftopt::car_sim::step(&s, &full, &p, H).map_err(|e| e.to_string())?;
        let kinematic = next.vel.v_x * p.steer_gain.tan() / p.wheelbase;
        ensure!(next.vel.omega < kinematic, "step {k}: yaw rate {} not below kinematic {kinematic}", next.vel.omega);
        max_vy = max_vy.max(next.vel.v_y.abs());
        s = next;
    }
    ensure!(max_vy > 0.1, "full-steer entry peak |v_y| {max_vy}");
    Ok(format!(
        "cap held on 10000 samples; kinematic error/tolerance straight {worst_straight:.2}, turn {worst_turn:.2}; drift |v_y| {max_vy:.2} m/s"
    ))
}

// ---------- shared data, 6 and 7

fn dataset() -> SplitDataset {
    let log = collect_dataset(&SimParams::default(), COLLECT_SECONDS, H, SEED).unwrap();
    let cfg = SplitConfig {
        train_fraction: 0.9,
        test_fraction: 0.05,
        validation_count: 40,
        validation_steps: 60,
        seed: SEED,
        ..SplitConfig::default()
    };
    split_dataset(&log, &cfg).unwrap()
}

/// Summary line and a hash over the TVE errors and the optimized parking controls.
fn perfect_model(data: &SplitDataset) -> Result<(String, String), String> {
    let sim = SimDynamics::new(SimParams::default(), H).map_err(|e| e.to_string())?;
    ensure!(data.validation.len() == 40, "{} validation trajectories", data.validation.len());
    ensure!(data.validation.iter().all(|t| t.steps() == 60), "validation trajectories are not 60 steps");
    let report = tve(&sim, &data.validation, "sim").map_err(|e| e.to_string())?;
    ensure!(report.tve < 1e-6, "oracle TVE {:e}", report.tve);

    let scenario = Scenario::bundled("parallel_parking").map_err(|e| e.to_string())?;
    let problem = TrajOptProblem::new(&sim, &scenario.cost, scenario.z0(), scenario.n)
        .with_config(scenario.optimizer.clone());
    let zeros = vec![[0.0; 2]; scenario.n];
    let initial = scenario.cost.target_cost(&rollout(&sim, &scenario.z0(), &zeros));
    let r = optimize(&problem, &zeros).map_err(|e| e.to_string())?;
    strictly_decreasing(&r)?;
    let ratio = scenario.cost.target_cost(&r.states) / initial;
    ensure!(ratio < 0.01, "parking target cost at {:.3}% of the zero-control value", 100.0 * ratio);
    let detail = format!(
        "oracle TVE {:.1e}; parking target cost {initial:.3} -> {:.2}% after {} iterations",
        report.tve,
        100.0 * ratio,
        r.iterations
    );
    let tve_hash = sha(serde_json::to_string(&report).unwrap().as_bytes());
    let controls_hash = sha(serde_json::to_string(&r.controls).unwrap().as_bytes());
    Ok((detail, sha(format!("{tve_hash}{controls_hash}").as_bytes())))
}

/// Constant-velocity baseline, written out directly: the body velocity never changes.
fn constant_velocity_tve(data: &SplitDataset) -> f64 {
    let errors: Vec<f64> = data
        .validation
        .iter()
        .map(|t| {
            let [vx, vy, w] = t.v0.to_array();
            let p = t.x0();
            let (mut x, mut y, mut th) = (p.x, p.y, p.heading);
            for _ in 0..t.steps() {
                x += H * (th.cos() * vx - th.sin() * vy);
                y += H * (th.sin() * vx + th.cos() * vy);
                th += H * w;
            }
            let end = t.final_pose();
            let dth = (th - end.heading + PI).rem_euclid(2.0 * PI) - PI;
            (x - end.x).abs() + (y - end.y).abs() + dth.abs()
        })
        .collect();
    errors.iter().sum::<f64>() / errors.len() as f64
}

struct Learned {
    model: MlpModel,
    history: TrainHistory,
}

fn learn(data: &SplitDataset) -> Result<Learned, String> {
    let spec = MlpSpec::uniform(8, 64, Activation::Gelu, SEED).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        loss: LossKind::Relative,
        epochs: EPOCHS,
        seed: SEED,
        ..TrainConfig::default()
    };
    let out = train(&spec, &data.train, &data.test, &cfg).map_err(|e| e.to_string())?;
    Ok(Learned {
        model: out.model,
        history: out.history,
    })
}

fn check_learned(data: &SplitDataset, l: &Learned) -> Outcome {
    let model_tve = tve(&LearnedDynamics::new(&l.model, H), &data.validation, "mlp")
        .map_err(|e| e.to_string())?
        .tve;
    let baseline = constant_velocity_tve(data);
    ensure!(model_tve < baseline, "model TVE {model_tve:.4} not below constant-velocity TVE {baseline:.4}");
    let smoothed = smooth_losses(&l.history.train_losses(), SMOOTHING_WINDOW);
    ensure!(smoothed.len() >= 10, "only {} epochs", smoothed.len());
    ensure!(
        smoothed[..10].windows(2).all(|w| w[1] < w[0]),
        "smoothed training loss not decreasing over the first 10 epochs: {:?}",
        &smoothed[..10]
    );
    Ok(format!(
        "{} pairs; TVE {model_tve:.4} vs constant-velocity {baseline:.4}; smoothed loss {:.4} -> {:.4} over 10 epochs",
        data.train.len(),
        smoothed[0],
        smoothed[9]
    ))
}

// ---------- 8: model selection at desk scale

fn criterion_8(data: &SplitDataset) -> Outcome {
    let cfg = SelectionConfig {
        train: TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        },
        train_limit: Some(6000),
        comparison: ComparisonConfig {
            repeats: 5,
            seed: SEED,
            ..ComparisonConfig::default()
        },
        grid: GridConfig {
            seed: SEED,
            ..GridConfig::default()
        },
        smoothness: SmoothnessConfig {
            seed: SEED,
            max_iterations: Some(30),
            ..SmoothnessConfig::default()
        },
    };
    let report = run_selection(data, &cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = report.write(dir.path()).map_err(|e| e.to_string())?;
    ensure!(paths.iter().all(|p| p.exists()), "missing report file");

    let kinds = &report.comparison.kinds;
    ensure!(kinds.len() == 3 && kinds.iter().all(|k| k.tve.len() == 5), "loss comparison is not 5 x 3");
    ensure!(kinds.iter().flat_map(|k| &k.tve).all(|t| t.is_finite()), "non-finite TVE in loss comparison");
    ensure!(report.grid.rows.len() == 12 && report.grid.rejected.is_empty(), "grid has {} rows", report.grid.rows.len());
    ensure!(report.grid.rows.iter().all(|r| r.tve.is_finite()), "non-finite TVE in grid");
    ensure!(report.grid.rows.windows(2).all(|w| w[0].tve <= w[1].tve), "grid not sorted by TVE");
    let grid_csv = std::fs::read_to_string(dir.path().join("grid.csv")).map_err(|e| e.to_string())?;
    ensure!(grid_csv.lines().count() == 13, "grid.csv has {} lines", grid_csv.lines().count());
    let s = &report.smoothness;
    for t in [&s.relu, &s.gelu] {
        ensure!(t.first_gradient.len() == 60 && t.controls.len() == 60, "{} trace has wrong length", t.model);
        ensure!(
            t.gradient_fluctuation.is_finite() && t.control_fluctuation.is_finite(),
            "{} fluctuation metric not finite",
            t.model
        );
    }

    for k in kinds {
        println!("    loss {:<9} TVE mean {:.4} std {:.4}", k.loss.name(), k.mean, k.std);
    }
    let lowest_std = kinds.iter().min_by(|a, b| a.std.total_cmp(&b.std)).unwrap();
    println!("    lowest TVE spread across seeds: {}", lowest_std.loss.name());
    for r in report.grid.rows.iter().take(3) {
        println!("    grid {}x{} {:<4} TVE {:.4} test loss {:.4}", r.hidden_layers, r.width, r.activation.name(), r.tve, r.test_loss);
    }
    println!(
        "    fluctuation relu grad {:.3e} ctrl {:.3e} | gelu grad {:.3e} ctrl {:.3e}",
        s.relu.gradient_fluctuation, s.relu.control_fluctuation, s.gelu.gradient_fluctuation, s.gelu.control_fluctuation
    );
    Ok(format!(
        "15 loss runs, 12 grid rows, smoothness traces written; GELU smoother controls: {}",
        s.gelu.control_fluctuation < s.relu.control_fluctuation
    ))
}

// ---------- 9: closed loop

fn race(model: &MlpModel) -> Result<(String, String), String> {
    let track = Track::desk_oval();
    let cfg = MpcConfig::default();
    let d = LearnedDynamics::new(model, cfg.h());
    let r = run_closed_loop(&track, &cfg, &d, &SimParams::default(), 1).map_err(|e| e.to_string())?;
    let s = &r.summary;
    ensure!(cfg.horizon == 20 && cfg.rate_hz == 20.0, "controller not at n = 20, 20 Hz");
    ensure!(s.completed, "lap not completed: {:?}", s.failure);
    ensure!(
        s.max_abs_d <= track.half_width() + 0.15,
        "max |d| {:.3} exceeds {:.3}",
        s.max_abs_d,
        track.half_width() + 0.15
    );
    ensure!(
        s.mean_forward_speed >= 0.5 * cfg.target_speed,
        "mean forward speed {:.2} below half of {:.2}",
        s.mean_forward_speed,
        cfg.target_speed
    );
    ensure!(s.shift_identity_violations == 0, "{} warm-start shift violations", s.shift_identity_violations);
    let detail = format!(
        "lap {:.2} s, max |d| {:.3} m, mean speed {:.2} m/s, {} cycles, {} degraded, {:.0}% over 50 ms",
        s.lap_times[0],
        s.max_abs_d,
        s.mean_forward_speed,
        s.cycles,
        s.degraded_cycles,
        100.0 * s.over_budget_fraction
    );
    Ok((detail, r.content_hash()))
}

// ---------- runner

struct Check {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
}

fn report(check: &Check, outcome: Outcome, elapsed: Duration, failures: &mut usize) {
    let outcome = match (outcome, check.limit) {
        (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.1?}, limit {limit:?}")),
        (o, _) => o,
    };
    let (tag, text) = match &outcome {
        Ok(t) => ("PASS", t.as_str()),
        Err(t) => ("FAIL", t.as_str()),
    };
    if outcome.is_err() {
        *failures += 1;
    }
    println!("criterion {:>2} {tag} {}: {text} ({:.1?})", check.id, check.name, elapsed);
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T, String>) -> (Result<T, String>, Duration) {
    let start = Instant::now();
    let r = guarded(f);
    (r, start.elapsed())
}

fn main() {
    let secs = Duration::from_secs;
    let mut failures = 0;
    let simple: [(Check, fn() -> Outcome); 5] = [
        (Check { id: 1, name: "gradient correctness", limit: Some(secs(10)) }, criterion_1),
        (Check { id: 2, name: "network Jacobian", limit: Some(secs(5)) }, criterion_2),
        (Check { id: 3, name: "loss formulas", limit: None }, criterion_3),
        (Check { id: 4, name: "line-search contract", limit: None }, criterion_4),
        (Check { id: 5, name: "simulator physics", limit: Some(secs(30)) }, criterion_5),
    ];
    for (check, f) in simple {
        let (r, t) = timed(f);
        report(&check, r, t, &mut failures);
    }

    let (data, t_data) = timed(|| Ok(dataset()));

    let c6 = Check { id: 6, name: "perfect-model sanity", limit: Some(secs(120)) };
    let (first6, t6) = match &data {
        Ok(d) => timed(|| perfect_model(d)),
        Err(e) => (Err(format!("dataset: {e}")), Duration::ZERO),
    };
    report(&c6, first6.as_ref().map(|(d, _)| d.clone()).map_err(Clone::clone), t6, &mut failures);

    let c7 = Check { id: 7, name: "learning end-to-end", limit: Some(secs(900)) };
    let (learned, t7) = match &data {
        Ok(d) => timed(|| learn(d)),
        Err(e) => (Err(format!("dataset: {e}")), Duration::ZERO),
    };
    let outcome7 = match (&data, &learned) {
        (Ok(d), Ok(l)) => guarded(|| check_learned(d, l)),
        (_, Err(e)) | (Err(e), _) => Err(e.clone()),
    };
    report(&c7, outcome7, t7 + t_data, &mut failures);

    let c8 = Check { id: 8, name: "model selection", limit: None };
    let (r8, t8) = match &data {
        Ok(d) => timed(|| criterion_8(d)),
        Err(e) => (Err(format!("dataset: {e}")), Duration::ZERO),
    };
    report(&c8, r8, t8, &mut failures);

    let c9 = Check { id: 9, name: "closed-loop control", limit: Some(secs(300)) };
    let (first9, t9) = match &learned {
        Ok(l) => timed(|| race(&l.model)),
        Err(e) => (Err(format!("no trained model: {e}")), Duration::ZERO),
    };
    report(&c9, first9.as_ref().map(|(d, _)| d.clone()).map_err(Clone::clone), t9, &mut failures);

    let c10 = Check { id: 10, name: "reproducibility", limit: None };
    let (r10, t10) = timed(|| {
        let (first6, first9) = (first6.clone()?, first9.clone()?);
        let first_model = learned.as_ref().map_err(Clone::clone)?.model.to_json().map_err(|e| e.to_string())?;
        let data = dataset();
        let again6 = perfect_model(&data)?;
        ensure!(again6.1 == first6.1, "perfect-model artifacts differ between runs");
        let again = learn(&data)?;
        let model_json = again.model.to_json().map_err(|e| e.to_string())?;
        ensure!(sha(model_json.as_bytes()) == sha(first_model.as_bytes()), "trained model hash differs");
        let again9 = race(&again.model)?;
        ensure!(again9.1 == first9.1, "closed-loop telemetry hash differs");
        Ok(format!(
            "model {}, telemetry {}",
            &sha(model_json.as_bytes())[..12],
            &again9.1[..12]
        ))
    });
    report(&c10, r10, t10, &mut failures);

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
