use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingPair;
use crate::error::{Error, Result};

use super::loss::{loss_value_and_grad, LossKind};
use super::model::{Layer, MlpModel, MlpSpec, Normalizer, INPUT_DIM, OUTPUT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Denominator stabilizer of the relative loss, in normalized velocity units.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Relative,
            epsilon: 1e-2,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidParameter("adaptive-moment parameters out of range".into()));
        }
        Ok(())
    }
}

/// Gradient with the same layer shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Layer>,
}

impl MlpGradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn batch_matrices(pairs: &[TrainingPair], norm: &Normalizer) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x = DMatrix::zeros(INPUT_DIM, pairs.len());
    let mut t = DMatrix::zeros(OUTPUT_DIM, pairs.len());
    for (j, p) in pairs.iter().enumerate() {
        x.column_mut(j).copy_from_slice(&norm.normalize_input(&p.input()));
        t.column_mut(j).copy_from_slice(&norm.normalize_output(&p.target()));
    }
    (x, t)
}

/// Mean loss over the columns and, if `grads` is given, its gradient written into it.
fn batch_loss(
    model: &MlpModel,
    x: DMatrix<f64>,
    t: &DMatrix<f64>,
    kind: LossKind,
    epsilon: f64,
    grads: Option<&mut MlpGradients>,
) -> f64 {
    let b = x.ncols();
    let inv_b = 1.0 / b as f64;
    let Some(grads) = grads else {
        let y = model.forward_normalized(x);
        return (0..b)
            .map(|j| {
                let (yj, tj) = (y.column(j), t.column(j));
                loss_value_and_grad(kind, epsilon, &[yj[0], yj[1], yj[2]], &[tj[0], tj[1], tj[2]]).0
            })
            .sum::<f64>()
            * inv_b;
    };

    let act = model.spec.activation;
    let trace = model.trace(x);
    let y = trace.pre.last().unwrap();
    let mut delta = DMatrix::zeros(OUTPUT_DIM, b);
    let mut total = 0.0;
    for j in 0..b {
        let (yj, tj) = (y.column(j), t.column(j));
        let (l, g) = loss_value_and_grad(kind, epsilon, &[yj[0], yj[1], yj[2]], &[tj[0], tj[1], tj[2]]);
        total += l;
        for k in 0..OUTPUT_DIM {
            delta[(k, j)] = g[k] * inv_b;
        }
    }
    for l in (0..model.layers.len()).rev() {
        let a_prev = &trace.post[l];
        grads.layers[l].weights = &delta * a_prev.transpose();
        grads.layers[l].bias = delta.column_sum();
        if l > 0 {
            let mut back = model.layers[l].weights.tr_mul(&delta);
            let z = &trace.pre[l - 1];
            back.zip_apply(z, |d, zv| *d *= act.deriv(zv));
            delta = back;
        }
    }
    total * inv_b
}

/// Exact gradient of the mean batch loss (normalized units) with respect to every weight and bias.
pub fn param_gradients(model: &MlpModel, batch: &[TrainingPair], loss: LossKind, epsilon: f64) -> Result<(MlpGradients, f64)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("gradient of an empty batch".into()));
    }
    let (x, t) = batch_matrices(batch, &model.normalizer);
    let mut grads = MlpGradients::zeros_like(model);
    let l = batch_loss(model, x, &t, loss, epsilon, Some(&mut grads));
    Ok((grads, l))
}

/// Mean loss of `model` over `pairs`, in normalized units.
pub fn evaluate_loss(model: &MlpModel, pairs: &[TrainingPair], loss: LossKind, epsilon: f64) -> f64 {
    if pairs.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(2048) {
        let (x, t) = batch_matrices(chunk, &model.normalizer);
        total += batch_loss(model, x, &t, loss, epsilon, None) * chunk.len() as f64;
    }
    total / pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` when no test set was given.
    pub test_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn final_test_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_loss).filter(|x| x.is_finite())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "test_loss"])?;
        for e in &self.epochs {
            let test = if e.test_loss.is_finite() {
                e.test_loss.to_string()
            } else {
                String::new()
            };
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), test])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trailing moving average over `window` epochs.
pub fn smooth_losses(losses: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..losses.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let s = &losses[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

fn values_mut(layer: &mut Layer) -> impl Iterator<Item = &mut f64> {
    let Layer { weights, bias } = layer;
    weights.iter_mut().chain(bias.iter_mut())
}

struct Adam {
    m: MlpGradients,
    v: MlpGradients,
    t: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        Self {
            m: MlpGradients::zeros_like(model),
            v: MlpGradients::zeros_like(model),
            t: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, g: &MlpGradients, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_epsilon;
        for l in 0..model.layers.len() {
            let params = values_mut(&mut model.layers[l]);
            let grads = g.layers[l].weights.iter().chain(g.layers[l].bias.iter());
            let ms = values_mut(&mut self.m.layers[l]);
            let vs = values_mut(&mut self.v.layers[l]);
            for (((p, &gi), m), v) in params.zip(grads).zip(ms).zip(vs) {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: TrainHistory,
}

/// Fits the normalizer on `train`, then runs seeded mini-batch adaptive-moment descent.
pub fn train(spec: &MlpSpec, train: &[TrainingPair], test: &[TrainingPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(spec, train, test, cfg, |_| {})
}

pub fn train_with_progress(
    spec: &MlpSpec,
    train: &[TrainingPair],
    test: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let mut model = MlpModel::initialized(spec.clone())?;
    model.normalizer = Normalizer::fit(train)?;
    let (x_all, t_all) = batch_matrices(train, &model.normalizer);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut adam = Adam::new(&model);
    let mut grads = MlpGradients::zeros_like(&model);
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x = x_all.select_columns(idx);
            let t = t_all.select_columns(idx);
            let l = batch_loss(&model, x, &t, cfg.loss, cfg.epsilon, Some(&mut grads));
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    step: epoch,
                    what: "training loss".into(),
                });
            }
            sum += l * idx.len() as f64;
            adam.update(&mut model, &grads, cfg);
        }
        let stats = EpochStats {
            epoch,
            train_loss: sum / train.len() as f64,
            test_loss: evaluate_loss(&model, test, cfg.loss, cfg.epsilon),
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(TrainOutcome { model, history })
}
