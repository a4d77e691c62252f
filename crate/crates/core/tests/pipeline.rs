//! Collect, split, persist, train, score and plan in one pass at toy scale.

use driftopt::car_sim::{collect_dataset, SimParams};
use driftopt::dataset::{split_dataset, SplitConfig, SplitDataset};
use driftopt::mlp::{train, Activation, LossKind, MlpModel, MlpSpec, TrainConfig};
use driftopt::selection::{tve, tve_model};
use driftopt::trajopt::{optimize, LearnedDynamics, Scenario, TrajOptProblem, ZeroVelocity};

const H: f64 = 0.05;

fn data() -> SplitDataset {
    let log = collect_dataset(&SimParams::default(), 120.0, H, 11).unwrap();
    let cfg = SplitConfig {
        train_fraction: 0.7,
        test_fraction: 0.1,
        validation_count: 5,
        validation_steps: 30,
        seed: 2,
        ..SplitConfig::default()
    };
    split_dataset(&log, &cfg).unwrap()
}

#[test]
fn dataset_and_model_survive_disk_round_trip() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    let files = data.save(&dir.path().join("data"), 2).unwrap();
    assert_eq!(files.len(), 2 + 5 + 1);
    let loaded = SplitDataset::load(&dir.path().join("data")).unwrap();
    assert_eq!(loaded, data);

    let spec = MlpSpec::uniform(2, 16, Activation::Gelu, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        loss: LossKind::Relative,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(&spec, &loaded.train, &loaded.test, &cfg).unwrap();
    let path = dir.path().join("model.json");
    out.model.save(&path).unwrap();
    let back = MlpModel::load(&path).unwrap();
    assert_eq!(back.to_json().unwrap(), out.model.to_json().unwrap());

    let a = tve_model(&out.model, H, &loaded.validation, "a").unwrap();
    let b = tve_model(&back, H, &loaded.validation, "b").unwrap();
    assert_eq!(a.errors, b.errors);
}

#[test]
fn trained_model_beats_standing_still_and_plans() {
    let data = data();
    let spec = MlpSpec::uniform(2, 32, Activation::Gelu, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = train(&spec, &data.train, &data.test, &cfg).unwrap().model;
    let learned = tve_model(&model, H, &data.validation, "mlp").unwrap();
    let still = tve(&LearnedDynamics::new(ZeroVelocity, H), &data.validation, "zero").unwrap();
    assert!(learned.tve < still.tve, "{} vs {}", learned.tve, still.tve);

    let scenario = Scenario::bundled("parallel_parking").unwrap();
    let mut opt = scenario.optimizer.clone();
    opt.max_iterations = 10;
    let d = LearnedDynamics::new(&model, H);
    let problem = TrajOptProblem::new(&d, &scenario.cost, scenario.z0(), scenario.n).with_config(opt);
    let r = optimize(&problem, &vec![[0.0; 2]; scenario.n]).unwrap();
    assert!(r.iterations <= 10);
    assert!(r.cost_history.windows(2).all(|w| w[1] < w[0]));
    assert!(r.controls.iter().flatten().all(|c| c.abs() <= 1.0));
}
