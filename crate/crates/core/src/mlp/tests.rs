use super::*;
use crate::car_sim::{BodyVelocity, ControlInput};
use crate::dataset::TrainingPair;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(hidden: usize, width: usize, act: Activation, seed: u64) -> MlpModel {
    let mut m = MlpModel::initialized(MlpSpec::uniform(hidden, width, act, seed).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for l in &mut m.layers {
        for b in l.bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    m.normalizer = Normalizer {
        input_mean: [0.5, -0.1, 0.2, 0.1, 0.0],
        input_scale: [1.5, 0.4, 2.0, 0.6, 0.5],
        output_mean: [0.0; 3],
        output_scale: [1.4, 0.3, 1.9],
    };
    m
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

/// Plain nested-loop forward pass.
fn oracle_forward(m: &MlpModel, input: &[f64; 5]) -> [f64; 3] {
    let n = &m.normalizer;
    let mut a: Vec<f64> = (0..5).map(|k| (input[k] - n.input_mean[k]) / n.input_scale[k]).collect();
    for (l, layer) in m.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.outputs()];
        for (r, zr) in z.iter_mut().enumerate() {
            let mut acc = layer.bias[r];
            for (c, ac) in a.iter().enumerate() {
                acc += layer.weights[(r, c)] * ac;
            }
            *zr = acc;
        }
        if l + 1 < m.layers.len() {
            for v in &mut z {
                *v = match m.spec.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Gelu => *v * 0.5 * (1.0 + libm::erf(*v / 2f64.sqrt())),
                };
            }
        }
        a = z;
    }
    [0, 1, 2].map(|k| a[k] * n.output_scale[k] + n.output_mean[k])
}

fn fd_jacobian(m: &MlpModel, input: &[f64; 5], step: f64) -> [[f64; 5]; 3] {
    let mut j = [[0.0; 5]; 3];
    for c in 0..5 {
        let mut p = *input;
        let mut q = *input;
        p[c] += step;
        q[c] -= step;
        let (yp, yq) = (m.forward_raw(&p), m.forward_raw(&q));
        for r in 0..3 {
            j[r][c] = (yp[r] - yq[r]) / (2.0 * step);
        }
    }
    j
}

/// Max elementwise error relative to the larger of the entry and the Jacobian's scale.
fn jac_rel_err(a: &[[f64; 5]; 3], b: &[[f64; 5]; 3]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / y.abs().max(scale * 1e-3))
        .fold(0.0, f64::max)
}

#[test]
fn activation_examples() {
    assert_eq!(gelu(0.0), 0.0);
    assert_eq!(Activation::Gelu.deriv(0.0), 0.5);
    assert_eq!(relu(-2.0), 0.0);
    assert_eq!(relu(3.0), 3.0);
    assert_eq!(Activation::Relu.deriv(0.0), 0.0);
    assert_eq!(Activation::Relu.deriv(1e-300), 1.0);
    // high-precision reference values
    assert!((gelu(2.0) - 1.954_499_736_103_641_6).abs() < 1e-14);
    assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
    assert!((gelu(0.5) - 0.345_731_230_637_006_55).abs() < 1e-15);
}

#[test]
fn gelu_derivative_matches_differences() {
    for k in -40..=40 {
        let x = k as f64 * 0.1;
        let h = 1e-6;
        let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
        assert!((Activation::Gelu.deriv(x) - fd).abs() < 1e-8);
    }
}

#[test]
fn spec_validation() {
    assert!(MlpSpec::uniform(0, 8, Activation::Gelu, 0).is_err());
    assert!(MlpSpec::uniform(2, 0, Activation::Gelu, 0).is_err());
    let s = MlpSpec::uniform(8, 64, Activation::Gelu, 0).unwrap();
    assert_eq!(s.layer_sizes.len(), 10);
    assert_eq!(s.param_count(), 6 * 64 + 7 * 65 * 64 + 65 * 3);
    let bad = MlpSpec {
        layer_sizes: vec![4, 8, 3],
        activation: Activation::Relu,
        seed: 0,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn zero_net_outputs_mean_and_zero_jacobian() {
    let m = MlpModel::zeros(MlpSpec::uniform(2, 8, Activation::Gelu, 0).unwrap()).unwrap();
    let y = m.forward(&BodyVelocity::new(1.0, 2.0, 3.0), &ControlInput::new(0.5, -0.5));
    assert_eq!(y, BodyVelocity::ZERO);
    let j = m.input_jacobian(&BodyVelocity::new(1.0, 2.0, 3.0), &ControlInput::new(0.5, -0.5));
    assert!(j.iter().flatten().all(|&x| x == 0.0));
}

fn identity_on_v() -> MlpModel {
    let mut m = MlpModel::zeros(MlpSpec::affine(0)).unwrap();
    for k in 0..3 {
        m.layers[0].weights[(k, k)] = 1.0;
    }
    m
}

#[test]
fn linear_selector_copies_velocity() {
    let m = identity_on_v();
    let v = BodyVelocity::new(0.7, -0.2, 1.3);
    assert_eq!(m.forward(&v, &ControlInput::new(0.9, -0.4)), v);
    let j = m.input_jacobian(&v, &ControlInput::new(0.9, -0.4));
    for r in 0..3 {
        for c in 0..5 {
            assert_eq!(j[r][c], if r == c { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn forward_matches_nested_loop_oracle() {
    let m = random_model(2, 8, Activation::Gelu, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = random_input(&mut rng);
        let (a, b) = (m.forward_raw(&x), oracle_forward(&m, &x));
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn batch_forward_agrees_with_single() {
    let m = random_model(3, 16, Activation::Gelu, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<[f64; 5]> = (0..40).map(|_| random_input(&mut rng)).collect();
    for (x, y) in xs.iter().zip(m.forward_batch(&xs)) {
        let s = m.forward_raw(x);
        for k in 0..3 {
            assert!((s[k] - y[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn gelu_jacobian_matches_finite_differences() {
    let m = random_model(8, 64, Activation::Gelu, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_input(&mut rng);
        let (_, j) = m.forward_with_jacobian(&x);
        worst = worst.max(jac_rel_err(&j, &fd_jacobian(&m, &x, 1e-5)));
    }
    assert!(worst < 1e-5, "worst {worst}");
}

fn min_abs_preactivation(m: &MlpModel, x: &[f64; 5]) -> f64 {
    let col = DMatrix::from_column_slice(5, 1, &m.normalizer.normalize_input(x));
    let t = m.trace(col);
    t.pre[..t.pre.len() - 1]
        .iter()
        .flat_map(|z| z.iter().copied())
        .fold(f64::INFINITY, |a, z| a.min(z.abs()))
}

#[test]
fn relu_jacobian_matches_away_from_kinks() {
    let m = random_model(4, 32, Activation::Relu, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 100 {
        let x = random_input(&mut rng);
        if min_abs_preactivation(&m, &x) < 1e-4 {
            continue;
        }
        let (_, j) = m.forward_with_jacobian(&x);
        // a step small enough not to cross any kink
        assert!(jac_rel_err(&j, &fd_jacobian(&m, &x, 1e-7)) < 1e-5);
        checked += 1;
    }
}

#[test]
fn loss_examples() {
    let t = [1.0, -1.0, 2.0];
    for kind in LossKind::ALL {
        let (l, g) = loss_value_and_grad(kind, 1e-3, &t, &t);
        assert_eq!(l, 0.0);
        assert_eq!(g, [0.0; 3]);
    }
    let (l, _) = loss_value_and_grad(LossKind::Relative, 1e-3, &[0.001, 0.0, 0.0], &[0.0; 3]);
    assert!((l - 1.0).abs() < 1e-12);
    let (l, g) = loss_value_and_grad(LossKind::Relative, 1e-3, &[1.0, -1.0, 0.0], &t);
    assert!((l - 0.499_875_031_242_189_45).abs() < 1e-12);
    assert!((g[2] + 1.0 / 4.001).abs() < 1e-15);
    let (l, g) = loss_value_and_grad(LossKind::L2, 0.0, &[1.0, 0.0, 0.0], &[0.0, 0.0, 2.0]);
    assert_eq!((l, g), (5.0, [2.0, 0.0, -4.0]));
}

fn pair(input: [f64; 5], out: [f64; 3]) -> TrainingPair {
    TrainingPair {
        v_in: BodyVelocity::new(input[0], input[1], input[2]),
        u_in: ControlInput::new(input[3], input[4]),
        v_out: BodyVelocity::from_array(out),
    }
}

#[test]
fn exact_predictions_have_zero_l2_gradient() {
    let m = identity_on_v();
    let batch = vec![pair([1.0, 0.2, -0.3, 0.5, 0.1], [1.0, 0.2, -0.3]); 4];
    let (g, l) = param_gradients(&m, &batch, LossKind::L2, 1e-2).unwrap();
    assert_eq!(l, 0.0);
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn single_layer_l2_gradient_is_outer_product() {
    let mut m = MlpModel::zeros(MlpSpec::affine(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layer = &mut m.layers[0];
    for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
        *w = rng.random_range(-1.0..1.0);
    }
    let x = [0.3, -0.7, 1.1, 0.4, -0.9];
    let target = [0.5, 0.25, -1.0];
    let (g, _) = param_gradients(&m, &[pair(x, target)], LossKind::L2, 1e-2).unwrap();
    let pred = m.forward_raw(&x);
    for r in 0..3 {
        let e = pred[r] - target[r];
        for c in 0..5 {
            assert!((g.layers[0].weights[(r, c)] - 2.0 * e * x[c]).abs() < 1e-12);
        }
        assert!((g.layers[0].bias[r] - 2.0 * e).abs() < 1e-12);
    }
}

#[test]
fn param_gradients_match_finite_differences() {
    let base = random_model(3, 16, Activation::Gelu, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch: Vec<TrainingPair> = (0..12)
        .map(|_| {
            let x = random_input(&mut rng);
            pair(x, [rng.random_range(-1.0..3.0), rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)])
        })
        .collect();
    for kind in [LossKind::L2, LossKind::Relative] {
        let (g, _) = param_gradients(&base, &batch, kind, 1e-2).unwrap();
        for _ in 0..50 {
            let l = rng.random_range(0..base.layers.len());
            let layer = &base.layers[l];
            let in_bias = rng.random_bool(0.2);
            let (idx, analytic) = if in_bias {
                let k = rng.random_range(0..layer.bias.len());
                (k, g.layers[l].bias[k])
            } else {
                let k = rng.random_range(0..layer.weights.len());
                (k, g.layers[l].weights.as_slice()[k])
            };
            let eval = |delta: f64| {
                let mut m = base.clone();
                if in_bias {
                    m.layers[l].bias[idx] += delta;
                } else {
                    m.layers[l].weights.as_mut_slice()[idx] += delta;
                }
                evaluate_loss(&m, &batch, kind, 1e-2)
            };
            let h = 1e-6;
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic - fd).abs() / fd.abs().max(1e-3);
            assert!(err < 1e-4, "{kind:?} layer {l} idx {idx}: {analytic} vs {fd}");
        }
    }
}

#[test]
fn training_recovers_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let a = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(3, |_, _| rng.random_range(-0.2..0.2));
    let make = |rng: &mut ChaCha8Rng, n: usize| -> Vec<TrainingPair> {
        (0..n)
            .map(|_| {
                let x = random_input(rng);
                let y = &a * DVector::from_column_slice(&x) + &b;
                pair(x, [y[0], y[1], y[2]])
            })
            .collect()
    };
    let train_set = make(&mut rng, 2000);
    let test_set = make(&mut rng, 200);
    let cfg = TrainConfig {
        loss: LossKind::L2,
        learning_rate: 1e-2,
        batch_size: 64,
        epochs: 150,
        ..TrainConfig::default()
    };
    let out = train(&MlpSpec::affine(1), &train_set, &test_set, &cfg).unwrap();
    let test_loss = out.history.final_test_loss().unwrap();
    assert!(test_loss < 1e-6, "test loss {test_loss}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data: Vec<TrainingPair> = (0..300)
        .map(|_| {
            let x = random_input(&mut rng);
            pair(x, [x[0] * 0.9 + x[3], x[1] * 0.5, x[2] + x[4]])
        })
        .collect();
    let spec = MlpSpec::uniform(2, 16, Activation::Gelu, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let a = train(&spec, &data, &[], &cfg).unwrap();
    let b = train(&spec, &data, &[], &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history.train_losses(), b.history.train_losses());
    assert!(train(&spec, &[], &[], &cfg).is_err());
}

#[test]
fn normalizer_floors_constant_features() {
    let data = vec![pair([1.0, 0.0, 0.0, 0.5, 0.5], [1.0, 0.0, 0.0]); 10];
    let n = Normalizer::fit(&data).unwrap();
    assert_eq!(n.input_scale[0], SCALE_FLOOR);
    assert_eq!(n.input_mean[0], 1.0);
    assert_eq!(n.output_scale[1], SCALE_FLOOR);
    assert_eq!(n.output_scale[0], 1.0);
}

#[test]
fn model_file_round_trip_is_bitwise() {
    let m = random_model(3, 12, Activation::Gelu, 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = MlpModel::load(&path).unwrap();
    assert_eq!(back, m);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x = random_input(&mut rng);
        assert_eq!(m.forward_raw(&x), back.forward_raw(&x));
    }
    let text = m.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
    assert!(MlpModel::from_json(&text).is_err());
}

#[test]
fn history_csv_header() {
    let h = TrainHistory {
        epochs: vec![EpochStats {
            epoch: 1,
            train_loss: 0.5,
            test_loss: f64::NAN,
        }],
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    h.write_csv(&p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,train_loss,test_loss\n1,0.5,\n");
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_nonnegative(
        p in prop::array::uniform3(-5.0..5.0f64),
        t in prop::array::uniform3(-5.0..5.0f64),
    ) {
        for kind in LossKind::ALL {
            let (l, _) = loss_value_and_grad(kind, 1e-2, &p, &t);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, p == t);
        }
    }

    #[test]
    fn forward_respects_lipschitz_bound(
        a in prop::array::uniform5(-2.0..2.0f64),
        b in prop::array::uniform5(-2.0..2.0f64),
    ) {
        let m = random_model(3, 16, Activation::Gelu, 5);
        // GELU's derivative is bounded by about 1.129
        let act_lip = 1.13f64;
        let n = &m.normalizer;
        let layers: f64 = m.layers.iter().map(|l| spectral_norm(&l.weights)).product();
        let in_scale = n.input_scale.iter().cloned().fold(f64::INFINITY, f64::min);
        let out_scale = n.output_scale.iter().cloned().fold(0.0, f64::max);
        let bound = layers * act_lip.powi(m.spec.hidden_layers() as i32) * out_scale / in_scale;
        let (fa, fb) = (m.forward_raw(&a), m.forward_raw(&b));
        let dy = (0..3).map(|k| (fa[k] - fb[k]).powi(2)).sum::<f64>().sqrt();
        let dx = (0..5).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dy <= bound * dx + 1e-12);
    }
}
