use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SplitDataset, TrainingPair};
use crate::error::{Error, Result};
use crate::mlp::{train, Activation, LossKind, MlpModel, MlpSpec, TrainConfig};
use crate::trajopt::Scenario;

use super::smoothness::{smoothness_report, SmoothnessReport, SmoothnessTrace};
use super::tve::tve_model;

/// TVE samples of one loss kind across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSamples {
    pub loss: LossKind,
    pub seeds: Vec<u64>,
    pub tve: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossComparisonReport {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub kinds: Vec<LossSamples>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn train_pairs(data: &SplitDataset, limit: Option<usize>) -> &[TrainingPair] {
    let n = limit.map_or(data.train.len(), |l| l.min(data.train.len()));
    &data.train[..n]
}

struct Trained {
    model: MlpModel,
    test_loss: f64,
    seconds: f64,
}

fn fit(spec: &MlpSpec, pairs: &[TrainingPair], data: &SplitDataset, cfg: &TrainConfig) -> Result<Trained> {
    let start = Instant::now();
    let out = train(spec, pairs, &data.test, cfg)?;
    Ok(Trained {
        test_loss: out.history.final_test_loss().unwrap_or(f64::NAN),
        seconds: start.elapsed().as_secs_f64(),
        model: out.model,
    })
}

/// Trains `repeats` seeded networks per loss kind on the same data and reports their TVE spread.
///
/// Repeat `r` uses seed `seed + r` for both initialization and shuffling, identically across kinds.
pub fn compare_losses(
    spec: &MlpSpec,
    data: &SplitDataset,
    cfg: &TrainConfig,
    repeats: usize,
    seed: u64,
    train_limit: Option<usize>,
) -> Result<LossComparisonReport> {
    if repeats < 2 {
        return Err(Error::InvalidParameter("loss comparison needs repeats >= 2".into()));
    }
    spec.validate()?;
    let validation = data.require_validation()?;
    let pairs = train_pairs(data, train_limit);
    let jobs: Vec<(LossKind, u64)> = LossKind::ALL
        .iter()
        .flat_map(|&k| (0..repeats as u64).map(move |r| (k, seed + r)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(loss, s)| {
            let spec = MlpSpec { seed: s, ..spec.clone() };
            let cfg = TrainConfig { loss, seed: s, ..cfg.clone() };
            let t = fit(&spec, pairs, data, &cfg)?;
            let r = tve_model(&t.model, data.h, validation, loss.name())?;
            Ok((r.tve, t.test_loss))
        })
        .collect::<Result<_>>()?;
    let kinds = LossKind::ALL
        .iter()
        .zip(results.chunks(repeats))
        .map(|(&loss, chunk)| {
            let tve: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let (mean, std) = mean_std(&tve);
            LossSamples {
                loss,
                seeds: (0..repeats as u64).map(|r| seed + r).collect(),
                test_loss: chunk.iter().map(|r| r.1).collect(),
                tve,
                mean,
                std,
            }
        })
        .collect();
    Ok(LossComparisonReport {
        hidden_layers: spec.hidden_layers(),
        width: spec.layer_sizes.get(1).copied().unwrap_or(0),
        activation: spec.activation,
        kinds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub hidden_layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![2, 4, 8],
            widths: vec![16, 64],
            activations: vec![Activation::Relu, Activation::Gelu],
            loss: LossKind::Relative,
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.widths.is_empty() || self.activations.is_empty() {
            return Err(Error::InvalidParameter("grid sets must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub loss: LossKind,
    pub test_loss: f64,
    pub tve: f64,
    pub param_count: usize,
    /// Wall time; kept out of the JSON report so it stays reproducible.
    #[serde(skip_serializing, default)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    /// Sorted by ascending TVE.
    pub rows: Vec<GridRow>,
    pub rejected: Vec<RejectedConfig>,
}

/// Trains one model per configuration; invalid configurations are reported, not fatal.
pub fn grid_search(
    grid: &GridConfig,
    data: &SplitDataset,
    cfg: &TrainConfig,
    train_limit: Option<usize>,
) -> Result<GridSearchReport> {
    grid.validate()?;
    let validation = data.require_validation()?;
    let pairs = train_pairs(data, train_limit);
    let mut specs = Vec::new();
    let mut rejected = Vec::new();
    for &layers in &grid.hidden_layers {
        for &width in &grid.widths {
            for &activation in &grid.activations {
                match MlpSpec::uniform(layers, width, activation, grid.seed) {
                    Ok(spec) => specs.push(spec),
                    Err(e) => rejected.push(RejectedConfig {
                        hidden_layers: layers,
                        width,
                        activation,
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }
    let cfg = TrainConfig {
        loss: grid.loss,
        seed: grid.seed,
        ..cfg.clone()
    };
    let mut rows: Vec<GridRow> = specs
        .par_iter()
        .map(|spec| {
            let t = fit(spec, pairs, data, &cfg)?;
            let r = tve_model(&t.model, data.h, validation, "grid")?;
            Ok(GridRow {
                hidden_layers: spec.hidden_layers(),
                width: spec.layer_sizes[1],
                activation: spec.activation,
                loss: grid.loss,
                test_loss: t.test_loss,
                tve: r.tve,
                param_count: spec.param_count(),
                train_seconds: t.seconds,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.tve.total_cmp(&b.tve));
    Ok(GridSearchReport { rows, rejected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            width: 64,
            activation: Activation::Gelu,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothnessConfig {
    /// Bundled scenario name or path to a scenario file.
    pub scenario: String,
    pub hidden_layers: usize,
    pub width: usize,
    pub seed: u64,
    /// Overrides the scenario's iteration budget when set.
    pub max_iterations: Option<usize>,
}

impl Default for SmoothnessConfig {
    fn default() -> Self {
        Self {
            scenario: "drifting_turn".into(),
            hidden_layers: 8,
            width: 64,
            seed: 0,
            max_iterations: Some(100),
        }
    }
}

/// Everything the selection command runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub train: TrainConfig,
    /// Uses only the leading `n` training pairs when set.
    pub train_limit: Option<usize>,
    pub comparison: ComparisonConfig,
    pub grid: GridConfig,
    pub smoothness: SmoothnessConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            train_limit: None,
            comparison: ComparisonConfig::default(),
            grid: GridConfig::default(),
            smoothness: SmoothnessConfig::default(),
        }
    }
}

impl SelectionConfig {
    /// 15 repeats per loss and a 200-network grid.
    pub fn full_scale() -> Self {
        Self {
            train: TrainConfig::default(),
            comparison: ComparisonConfig {
                repeats: 15,
                ..ComparisonConfig::default()
            },
            grid: GridConfig {
                hidden_layers: (1..=10).collect(),
                widths: vec![16, 24, 32, 48, 64, 96, 128, 192, 256, 512],
                ..GridConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let name = &self.smoothness.scenario;
        let mut s = if Scenario::bundled_names().any(|b| b == name) {
            Scenario::bundled(name)?
        } else {
            Scenario::load(name)?
        };
        if let Some(it) = self.smoothness.max_iterations {
            s.optimizer.max_iterations = it;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub comparison: LossComparisonReport,
    pub grid: GridSearchReport,
    pub smoothness: SmoothnessReport,
}

pub fn run_selection(data: &SplitDataset, cfg: &SelectionConfig) -> Result<SelectionReport> {
    data.require_validation()?;
    let scenario = cfg.scenario()?;
    let c = &cfg.comparison;
    let spec = MlpSpec::uniform(c.hidden_layers, c.width, c.activation, c.seed)?;
    let comparison = compare_losses(&spec, data, &cfg.train, c.repeats, c.seed, cfg.train_limit)?;
    let grid = grid_search(&cfg.grid, data, &cfg.train, cfg.train_limit)?;

    let s = &cfg.smoothness;
    let pairs = train_pairs(data, cfg.train_limit);
    let train_cfg = TrainConfig {
        seed: s.seed,
        ..cfg.train.clone()
    };
    let models: Vec<MlpModel> = [Activation::Relu, Activation::Gelu]
        .par_iter()
        .map(|&act| {
            let spec = MlpSpec::uniform(s.hidden_layers, s.width, act, s.seed)?;
            Ok(fit(&spec, pairs, data, &train_cfg)?.model)
        })
        .collect::<Result<_>>()?;
    let smoothness = smoothness_report(&models[0], &models[1], &scenario)?;
    Ok(SelectionReport {
        comparison,
        grid,
        smoothness,
    })
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_trace(path: &Path, trace: &SmoothnessTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "grad_throttle", "grad_steer", "throttle", "steer"])?;
    for (i, (g, u)) in trace.first_gradient.iter().zip(&trace.controls).enumerate() {
        w.write_record([i.to_string(), g[0].to_string(), g[1].to_string(), u[0].to_string(), u[1].to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl SelectionReport {
    /// Writes `selection.json` plus plotting CSVs; returns the written paths.
    ///
    /// Training wall times go to `grid_timing.csv` only.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("selection.json");
        create(&json)?
            .write_all(serde_json::to_string_pretty(self)?.as_bytes())
            .map_err(|e| Error::io(&json, e))?;

        let losses = dir.join("loss_comparison.csv");
        let mut w = csv::Writer::from_path(&losses)?;
        w.write_record(["loss", "seed", "tve", "test_loss"])?;
        for k in &self.comparison.kinds {
            for ((seed, tve), test) in k.seeds.iter().zip(&k.tve).zip(&k.test_loss) {
                w.write_record([k.loss.name().to_string(), seed.to_string(), tve.to_string(), test.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(&losses, e))?;

        let grid = dir.join("grid.csv");
        let mut w = csv::Writer::from_path(&grid)?;
        w.write_record(["hidden_layers", "width", "activation", "loss", "test_loss", "tve", "param_count"])?;
        for r in &self.grid.rows {
            w.write_record([
                r.hidden_layers.to_string(),
                r.width.to_string(),
                r.activation.name().to_string(),
                r.loss.name().to_string(),
                r.test_loss.to_string(),
                r.tve.to_string(),
                r.param_count.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&grid, e))?;

        let timing = dir.join("grid_timing.csv");
        let mut w = csv::Writer::from_path(&timing)?;
        w.write_record(["hidden_layers", "width", "activation", "train_seconds"])?;
        for r in &self.grid.rows {
            w.write_record([
                r.hidden_layers.to_string(),
                r.width.to_string(),
                r.activation.name().to_string(),
                format!("{:.3}", r.train_seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&timing, e))?;

        let relu = dir.join("smoothness_relu.csv");
        let gelu = dir.join("smoothness_gelu.csv");
        write_trace(&relu, &self.smoothness.relu)?;
        write_trace(&gelu, &self.smoothness.gelu)?;
        Ok(vec![json, losses, grid, timing, relu, gelu])
    }
}
