use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::car_sim::{BodyVelocity, ControlInput};
use crate::dataset::TrainingPair;
use crate::error::{Error, Result};

use super::activation::Activation;

pub const INPUT_DIM: usize = 5;
pub const OUTPUT_DIM: usize = 3;
pub const FORMAT_VERSION: u32 = 1;

/// Layer widths including the 5-wide input and 3-wide output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    /// `hidden_layers` hidden layers of equal `width`; at least one hidden layer is required.
    pub fn uniform(hidden_layers: usize, width: usize, activation: Activation, seed: u64) -> Result<Self> {
        if hidden_layers == 0 {
            return Err(Error::InvalidParameter(
                "network needs at least one hidden layer".into(),
            ));
        }
        let mut layer_sizes = vec![INPUT_DIM];
        layer_sizes.extend(std::iter::repeat_n(width, hidden_layers));
        layer_sizes.push(OUTPUT_DIM);
        let spec = Self {
            layer_sizes,
            activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// An affine map from input to output with no hidden layer.
    pub fn affine(seed: u64) -> Self {
        Self {
            layer_sizes: vec![INPUT_DIM, OUTPUT_DIM],
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.layer_sizes;
        if s.len() < 2 || s[0] != INPUT_DIM || s[s.len() - 1] != OUTPUT_DIM || s.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must run from {INPUT_DIM} to {OUTPUT_DIM} with no empty layer, got {s:?}"
            )));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: [f64; INPUT_DIM],
    pub input_scale: [f64; INPUT_DIM],
    pub output_mean: [f64; OUTPUT_DIM],
    pub output_scale: [f64; OUTPUT_DIM],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::identity()
    }
}

pub const SCALE_FLOOR: f64 = 1e-6;

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            input_mean: [0.0; INPUT_DIM],
            input_scale: [1.0; INPUT_DIM],
            output_mean: [0.0; OUTPUT_DIM],
            output_scale: [1.0; OUTPUT_DIM],
        }
    }

    /// Inputs get per-feature mean/std. Outputs keep a zero mean and use their RMS as
    /// scale, so normalized targets stay proportional to the true velocity.
    pub fn fit(pairs: &[TrainingPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InsufficientData("cannot fit a normalizer to no data".into()));
        }
        let n = pairs.len() as f64;
        let mut input_mean = [0.0; INPUT_DIM];
        let mut input_scale = [0.0; INPUT_DIM];
        let mut output_scale = [0.0; OUTPUT_DIM];
        for p in pairs {
            for (m, x) in input_mean.iter_mut().zip(p.input()) {
                *m += x;
            }
        }
        for m in &mut input_mean {
            *m /= n;
        }
        for p in pairs {
            for ((s, m), x) in input_scale.iter_mut().zip(&input_mean).zip(p.input()) {
                *s += (x - m) * (x - m);
            }
            for (s, y) in output_scale.iter_mut().zip(p.target()) {
                *s += y * y;
            }
        }
        for s in input_scale.iter_mut().chain(output_scale.iter_mut()) {
            *s = (*s / n).sqrt().max(SCALE_FLOOR);
        }
        Ok(Self {
            input_mean,
            input_scale,
            output_mean: [0.0; OUTPUT_DIM],
            output_scale,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .input_mean
            .iter()
            .chain(&self.input_scale)
            .chain(&self.output_mean)
            .chain(&self.output_scale);
        let scales_ok = self.input_scale.iter().chain(&self.output_scale).all(|&s| s > 0.0);
        if !scales_ok || !all.clone().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("normalizer scales must be positive and finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize_input(&self, x: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|k| (x[k] - self.input_mean[k]) / self.input_scale[k])
    }

    #[inline]
    pub fn normalize_output(&self, y: &[f64; OUTPUT_DIM]) -> [f64; OUTPUT_DIM] {
        std::array::from_fn(|k| (y[k] - self.output_mean[k]) / self.output_scale[k])
    }

    #[inline]
    pub fn denormalize_output(&self, y: &[f64; OUTPUT_DIM]) -> [f64; OUTPUT_DIM] {
        std::array::from_fn(|k| y[k] * self.output_scale[k] + self.output_mean[k])
    }
}

/// One affine layer; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    /// `W · a + b` for every column of `a`.
    pub(crate) fn affine(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weights * a;
        let rows = z.nrows();
        for col in z.as_mut_slice().chunks_exact_mut(rows) {
            for (v, b) in col.iter_mut().zip(self.bias.iter()) {
                *v += b;
            }
        }
        z
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    spec: MlpSpec,
    normalizer: Normalizer,
    layers: Vec<LayerRecord>,
}

/// Feedforward network mapping `(v_i, u_i)` to `v_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
    pub normalizer: Normalizer,
}

/// Pre-activations and activations of a batched forward pass, columns are samples.
pub(crate) struct Trace {
    /// `pre[l]` is the input to activation after layer `l`; the last entry is the raw output.
    pub pre: Vec<DMatrix<f64>>,
    /// `post[0]` is the normalized input, `post[l + 1]` the activation after layer `l`.
    pub post: Vec<DMatrix<f64>>,
}

impl MlpModel {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            spec,
            layers,
            normalizer: Normalizer::identity(),
        })
    }

    /// He-scaled Gaussian weights, zero biases, seeded by `spec.seed`.
    pub fn initialized(spec: MlpSpec) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.spec.seed);
        for layer in &mut model.layers {
            let std = (2.0 / layer.inputs() as f64).sqrt();
            // fill row by row so the draw order matches the row-major file layout
            for r in 0..layer.outputs() {
                for c in 0..layer.inputs() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    layer.weights[(r, c)] = std * z;
                }
            }
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.normalizer.validate()?;
        let sizes = &self.spec.layer_sizes;
        if self.layers.len() + 1 != sizes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layers for layer sizes {sizes:?}",
                self.layers.len()
            )));
        }
        for (l, (layer, w)) in self.layers.iter().zip(sizes.windows(2)).enumerate() {
            if layer.inputs() != w[0] || layer.outputs() != w[1] || layer.bias.len() != w[1] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} is {}x{} with {} biases, expected {}x{}",
                    layer.outputs(),
                    layer.inputs(),
                    layer.bias.len(),
                    w[1],
                    w[0]
                )));
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|x| x.is_finite()) {
                return Err(Error::InvalidParameter(format!("layer {l} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Forward pass on normalized inputs (columns), keeping intermediate values.
    pub(crate) fn trace(&self, x: DMatrix<f64>) -> Trace {
        let act = self.spec.activation;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        post.push(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(post.last().unwrap());
            if l < last {
                post.push(z.map(|v| act.apply(v)));
            }
            pre.push(z);
        }
        Trace { pre, post }
    }

    /// Raw network output (normalized units) for normalized inputs, one sample per column.
    pub(crate) fn forward_normalized(&self, x: DMatrix<f64>) -> DMatrix<f64> {
        let act = self.spec.activation;
        let last = self.layers.len() - 1;
        let mut a = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a);
            a = if l < last { z.map(|v| act.apply(v)) } else { z };
        }
        a
    }

    fn normalized_column(&self, input: &[f64; INPUT_DIM]) -> DMatrix<f64> {
        DMatrix::from_column_slice(INPUT_DIM, 1, &self.normalizer.normalize_input(input))
    }

    /// Predicts the next velocity for a raw `[v_x, v_y, ω, throttle, steer]` input.
    pub fn forward_raw(&self, input: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        let y = self.forward_normalized(self.normalized_column(input));
        self.normalizer.denormalize_output(&[y[0], y[1], y[2]])
    }

    pub fn forward(&self, v: &BodyVelocity, u: &ControlInput) -> BodyVelocity {
        let [vx, vy, w] = v.to_array();
        let [t, s] = u.to_array();
        BodyVelocity::from_array(self.forward_raw(&[vx, vy, w, t, s]))
    }

    /// Forward pass over many raw inputs at once.
    pub fn forward_batch(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<[f64; OUTPUT_DIM]> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let mut x = DMatrix::zeros(INPUT_DIM, inputs.len());
        for (j, input) in inputs.iter().enumerate() {
            x.column_mut(j)
                .copy_from_slice(&self.normalizer.normalize_input(input));
        }
        let y = self.forward_normalized(x);
        y.as_slice()
            .chunks_exact(OUTPUT_DIM)
            .map(|c| self.normalizer.denormalize_output(&[c[0], c[1], c[2]]))
            .collect()
    }

    /// Output and the exact 3×5 Jacobian with respect to the raw input.
    pub fn forward_with_jacobian(&self, input: &[f64; INPUT_DIM]) -> ([f64; OUTPUT_DIM], [[f64; INPUT_DIM]; OUTPUT_DIM]) {
        let act = self.spec.activation;
        let trace = self.trace(self.normalized_column(input));
        let out = trace.pre.last().unwrap();
        let y = self.normalizer.denormalize_output(&[out[0], out[1], out[2]]);

        // reverse accumulation: G starts as diag(out_scale) and is pulled back layer by layer
        let mut g = DMatrix::from_diagonal(&DVector::from_column_slice(&self.normalizer.output_scale));
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                let z = &trace.pre[l];
                for c in 0..g.ncols() {
                    let d = act.deriv(z[c]);
                    g.column_mut(c).scale_mut(d);
                }
            }
            g = &g * &self.layers[l].weights;
        }
        let mut jac = [[0.0; INPUT_DIM]; OUTPUT_DIM];
        for (r, row) in jac.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = g[(r, c)] / self.normalizer.input_scale[c];
            }
        }
        (y, jac)
    }

    pub fn input_jacobian(&self, v: &BodyVelocity, u: &ControlInput) -> [[f64; INPUT_DIM]; OUTPUT_DIM] {
        let [vx, vy, w] = v.to_array();
        let [t, s] = u.to_array();
        self.forward_with_jacobian(&[vx, vy, w, t, s]).1
    }

    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.outputs(),
                cols: l.inputs(),
                weights: l.weights.transpose().as_slice().to_vec(),
                bias: l.bias.as_slice().to_vec(),
            })
            .collect();
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            spec: self.spec.clone(),
            normalizer: self.normalizer.clone(),
            layers,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (l, rec) in file.layers.into_iter().enumerate() {
            if rec.weights.len() != rec.rows * rec.cols || rec.bias.len() != rec.rows {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: {} weights and {} biases for a {}x{} layer",
                    rec.weights.len(),
                    rec.bias.len(),
                    rec.rows,
                    rec.cols
                )));
            }
            layers.push(Layer {
                weights: DMatrix::from_row_slice(rec.rows, rec.cols, &rec.weights),
                bias: DVector::from_vec(rec.bias),
            });
        }
        let model = Self {
            spec: file.spec,
            layers,
            normalizer: file.normalizer,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
