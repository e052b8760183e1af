//! Fully connected regressor from 4-D transceiver coordinates to channel gain.
//!
//! Inputs `(tx_x, tx_y, rx_x, rx_y)` are mapped affinely onto `[-1, 1]` from
//! the region bounds; targets are z-scored with constants taken from the
//! training set. The network works in normalized units and [`MlpModel::forward`]
//! returns de-normalized gains in dB.

mod checkpoint;
pub use checkpoint::MAGIC as CHECKPOINT_MAGIC;
mod optim;
mod train;

pub use optim::{Optimizer, OptimizerKind};
pub use train::{gradient_check, mse_db2, GradientCheck, train, train_epochs, EpochMetrics, TrainConfig};

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Position, Roi};
use crate::error::{Error, Result};
use crate::predictor::GainPredictor;
use crate::sampling::Sample;

pub const INPUT_DIM: usize = 4;
pub const OUTPUT_DIM: usize = 1;
pub const HIDDEN_LAYERS: usize = 7;
pub const DEFAULT_HIDDEN_WIDTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Affine per-coordinate input map `x' = scale * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub scale: [f64; INPUT_DIM],
    pub offset: [f64; INPUT_DIM],
}

impl InputNorm {
    /// Maps `[0, width] x [0, height]` onto `[-1, 1]` for both endpoints.
    pub fn from_roi(roi: &Roi) -> Self {
        let (sx, sy) = (2.0 / roi.width, 2.0 / roi.height);
        Self {
            scale: [sx, sy, sx, sy],
            offset: [-1.0; INPUT_DIM],
        }
    }

    pub fn identity() -> Self {
        Self {
            scale: [1.0; INPUT_DIM],
            offset: [0.0; INPUT_DIM],
        }
    }

    pub fn apply(&self, tx: &Position, rx: &Position) -> [f64; INPUT_DIM] {
        let raw = [tx.x, tx.y, rx.x, rx.y];
        std::array::from_fn(|k| self.scale[k] * raw[k] + self.offset[k])
    }
}

/// Z-score constants for the gain target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNorm {
    pub mean_db: f64,
    pub std_db: f64,
}

impl TargetNorm {
    /// Mean and population standard deviation of the gains. A degenerate
    /// (constant) target set gets a unit scale.
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("cannot normalize an empty dataset".into()));
        }
        let n = samples.len() as f64;
        let mean_db = samples.iter().map(|s| s.gain_db).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.gain_db - mean_db).powi(2)).sum::<f64>() / n;
        let std_db = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(Self { mean_db, std_db })
    }

    pub fn normalize(&self, gain_db: f64) -> f64 {
        (gain_db - self.mean_db) / self.std_db
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std_db + self.mean_db
    }
}

/// One affine layer; `weights` has shape `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    activation: Activation,
    input_norm: InputNorm,
    target_norm: TargetNorm,
}

/// Parameter gradients, laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// Activations kept from a forward pass for backpropagation.
struct Trace {
    /// Input to every layer; `inputs[0]` is the normalized batch.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpModel {
    /// Assembles a model from explicit layers. The chain must start at 4
    /// inputs and end at 1 output; hidden depth is not constrained here so
    /// reduced networks can be built for testing.
    pub fn from_layers(layers: Vec<Dense>, input_norm: InputNorm, target_norm: TargetNorm) -> Result<Self> {
        let model = Self {
            layers,
            activation: Activation::Relu,
            input_norm,
            target_norm,
        };
        model.validate()?;
        Ok(model)
    }

    /// He-uniform initialized network with the given layer widths.
    pub fn init(layer_dims: &[usize], input_norm: InputNorm, target_norm: TargetNorm, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArgument("a network needs at least an input and an output layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::from_layers(layers, input_norm, target_norm)
    }

    /// The channel twin: seven hidden ReLU layers of `width` units, input
    /// normalization from the region bounds and target normalization from
    /// the training samples only.
    pub fn twin(roi: &Roi, train: &[Sample], width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        let mut dims = vec![INPUT_DIM];
        dims.extend(std::iter::repeat_n(width, HIDDEN_LAYERS));
        dims.push(OUTPUT_DIM);
        Self::init(&dims, InputNorm::from_roi(roi), TargetNorm::from_samples(train)?, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or_else(|| Error::Invariant("model has no layers".into()))?;
        if first.fan_in() != INPUT_DIM {
            return Err(Error::Invariant(format!("input dimension must be {INPUT_DIM}, got {}", first.fan_in())));
        }
        let last = self.layers.last().expect("non-empty");
        if last.fan_out() != OUTPUT_DIM {
            return Err(Error::Invariant(format!("output dimension must be {OUTPUT_DIM}, got {}", last.fan_out())));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k} emits {} values but layer {} expects {}",
                    pair[0].fan_out(),
                    k + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::ShapeMismatch(format!("layer {k} bias length {} != {}", l.bias.len(), l.fan_out())));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("layer {k} has non-finite parameters")));
            }
        }
        let tn = &self.target_norm;
        if !(tn.std_db.is_finite() && tn.std_db > 0.0 && tn.mean_db.is_finite()) {
            return Err(Error::Invariant(format!("invalid target normalization {tn:?}")));
        }
        let inorm = &self.input_norm;
        if inorm.scale.iter().chain(&inorm.offset).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite input normalization".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.input_norm
    }

    pub fn target_norm(&self) -> &TargetNorm {
        &self.target_norm
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(INPUT_DIM)
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mutable access to one scalar parameter in flattened order.
    pub(crate) fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if index < nw {
                return l.weights.iter_mut().nth(index).expect("in range");
            }
            index -= nw;
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Normalized input matrix for a batch of links.
    pub fn input_matrix<'a>(&self, links: impl ExactSizeIterator<Item = (&'a Position, &'a Position)>) -> Array2<f64> {
        let mut x = Array2::zeros((links.len(), INPUT_DIM));
        for (mut row, (tx, rx)) in x.rows_mut().into_iter().zip(links) {
            row.assign(&Array1::from(self.input_norm.apply(tx, rx).to_vec()));
        }
        x
    }

    fn trace(&self, x: Array2<f64>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x;
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(a);
            a = z;
        }
        Trace { inputs, output: a }
    }

    /// Which hidden units are active (pre-activation > 0), sample by sample.
    pub(crate) fn relu_pattern(&self, batch: &[Sample]) -> Vec<bool> {
        let x = self.input_matrix(batch.iter().map(|s| (&s.tx, &s.rx)));
        let mut out = Vec::new();
        let mut a = x;
        for l in &self.layers[..self.layers.len() - 1] {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            out.extend(z.iter().map(|&v| v > 0.0));
            z.mapv_inplace(|v| v.max(0.0));
            a = z;
        }
        out
    }

    /// Network output in normalized target units for a normalized input batch.
    pub fn forward_normalized(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut a = x.dot(&self.layers[0].weights);
        a += &self.layers[0].bias;
        for l in &self.layers[1..] {
            a.mapv_inplace(|v| v.max(0.0));
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    /// Predicted gain in dB for one link.
    pub fn forward(&self, tx: &Position, rx: &Position) -> Result<f64> {
        let x = self.input_matrix(std::iter::once((tx, rx)));
        let g = self.target_norm.denormalize(self.forward_normalized(&x)[0]);
        if g.is_finite() {
            Ok(g)
        } else {
            Err(Error::Invariant("model produced a non-finite output".into()))
        }
    }

    /// Predicted gains in dB for every sample's link.
    pub fn predict_samples(&self, samples: &[Sample]) -> Vec<f64> {
        const CHUNK: usize = 1024;
        samples
            .chunks(CHUNK)
            .flat_map(|chunk| {
                let x = self.input_matrix(chunk.iter().map(|s| (&s.tx, &s.rx)));
                self.forward_normalized(&x)
                    .into_iter()
                    .map(|z| self.target_norm.denormalize(z))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn target_vector(&self, batch: &[Sample]) -> Array1<f64> {
        batch.iter().map(|s| self.target_norm.normalize(s.gain_db)).collect()
    }

    /// Mean squared error of a batch in normalized target units.
    pub fn loss(&self, batch: &[Sample]) -> f64 {
        let x = self.input_matrix(batch.iter().map(|s| (&s.tx, &s.rx)));
        let y = self.forward_normalized(&x);
        let t = self.target_vector(batch);
        Zip::from(&y).and(&t).fold(0.0, |acc, a, b| acc + (a - b).powi(2)) / batch.len() as f64
    }

    /// Normalized-unit MSE of the batch and its gradient.
    pub fn loss_gradient(&self, batch: &[Sample]) -> (f64, Gradients) {
        self.scaled_loss_gradient(batch, 1.0)
    }

    /// Like [`Self::loss_gradient`] for the loss multiplied by `scale`.
    pub fn scaled_loss_gradient(&self, batch: &[Sample], scale: f64) -> (f64, Gradients) {
        let x = self.input_matrix(batch.iter().map(|s| (&s.tx, &s.rx)));
        let t = self.target_vector(batch);
        self.backprop(x, &t, scale)
    }

    pub(crate) fn backprop(&self, x: Array2<f64>, targets: &Array1<f64>, scale: f64) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let trace = self.trace(x);
        let residual = &trace.output.column(0) - targets;
        let loss = scale * residual.dot(&residual) / n;

        let mut delta = residual.insert_axis(Axis(1)) * (2.0 * scale / n);
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let a_prev = &trace.inputs[k];
            let weights = a_prev.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weights.t());
                // a_prev is relu(z); its derivative vanishes where a_prev == 0
                Zip::from(&mut back).and(a_prev).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }
}

impl GainPredictor for MlpModel {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        self.forward(tx, rx)
    }
}
