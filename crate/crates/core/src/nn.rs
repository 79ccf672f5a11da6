//! Fully connected sigmoid network built from scratch.
//!
//! Every non-input node computes `net = b + Σ_k w_k · x_k` over its incoming
//! links and emits `sigmoid(net)`. Training minimises the summed squared error
//! `E = Σ_x ½ (a_x − o_x)²` by online gradient descent, `y ← y − Γ · ∂E/∂y`, on
//! both weights and biases.
//!
//! Weight layout: `weights[layer][to][from]`, where layer 0 connects the inputs
//! to the first hidden layer (or directly to the outputs when there is no hidden
//! layer).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Logistic function, kept strictly inside `(0, 1)` for every finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Default hidden width `floor((inputs + outputs) / 2)`, never below one.
pub fn hidden_size_default(input_count: usize, output_count: usize) -> usize {
    ((input_count + output_count) / 2).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_count: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_count: usize,
}

impl LayerSpec {
    pub fn new(input_count: usize, hidden_sizes: Vec<usize>, output_count: usize) -> Result<Self> {
        let spec = Self {
            input_count,
            hidden_sizes,
            output_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `hidden_layers` layers of the default width.
    pub fn with_default_hidden(input_count: usize, hidden_layers: usize, output_count: usize) -> Result<Self> {
        let width = hidden_size_default(input_count, output_count);
        Self::new(input_count, vec![width; hidden_layers], output_count)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_count == 0 {
            return Err(Error::InvalidSpec("input_count must be >= 1".into()));
        }
        if self.output_count == 0 {
            return Err(Error::InvalidSpec("output_count must be >= 1".into()));
        }
        if let Some(pos) = self.hidden_sizes.iter().position(|&h| h == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {pos} has zero nodes")));
        }
        Ok(())
    }

    /// Node counts of every layer, inputs first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(self.input_count);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(self.output_count);
        sizes
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.hidden_sizes.len() + 1
    }

    pub fn is_single_layer(&self) -> bool {
        self.hidden_sizes.is_empty()
    }

    /// Total number of trainable scalars (weights plus biases).
    pub fn parameter_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
}

/// Complete snapshot of a network: topology, weights, biases and bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    spec: LayerSpec,
    activation: Activation,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    version: u64,
    trained_epochs: u64,
}

impl NetworkParameters {
    /// Assembles parameters, checking every shape and that all values are finite.
    pub fn from_parts(spec: LayerSpec, weights: Vec<Vec<Vec<f64>>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let params = Self {
            spec,
            activation: Activation::Sigmoid,
            weights,
            biases,
            version: 0,
            trained_epochs: 0,
        };
        params.validate()?;
        Ok(params)
    }

    /// Every weight and bias set to `value`.
    pub fn constant(spec: LayerSpec, value: f64) -> Result<Self> {
        spec.validate()?;
        let sizes = spec.layer_sizes();
        let weights = sizes.windows(2).map(|w| vec![vec![value; w[0]]; w[1]]).collect();
        let biases = sizes.windows(2).map(|w| vec![value; w[1]]).collect();
        Self::from_parts(spec, weights, biases)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let sizes = self.spec.layer_sizes();
        if self.weights.len() != sizes.len() - 1 || self.biases.len() != sizes.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {} weight and {} bias layers",
                sizes.len() - 1,
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, width) = (pair[0], pair[1]);
            if self.weights[l].len() != width || self.biases[l].len() != width {
                return Err(Error::ShapeMismatch(format!("layer {l}: expected {width} nodes")));
            }
            if let Some(row) = self.weights[l].iter().position(|r| r.len() != fan_in) {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} node {row}: expected {fan_in} incoming weights"
                )));
            }
        }
        if !self.values().all(f64::is_finite) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Vec<Vec<f64>>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn trained_epochs(&self) -> u64 {
        self.trained_epochs
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn with_trained_epochs(mut self, epochs: u64) -> Self {
        self.trained_epochs = epochs;
        self
    }

    /// All scalars in canonical order: per layer, weights row-major then biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().flatten().chain(b.iter()).copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Copy with every scalar replaced from `flat` (same order as [`Self::values`]).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.spec.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.parameter_count(),
                actual: flat.len(),
            });
        }
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for (w, b) in out.weights.iter_mut().zip(out.biases.iter_mut()) {
            for v in w.iter_mut().flatten().chain(b.iter_mut()) {
                *v = it.next().unwrap_or_default();
            }
        }
        out.validate()?;
        Ok(out)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_count {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_count,
                actual: input.len(),
            });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("input vector".into()));
        }
        Ok(())
    }

    /// Final-layer outputs only. Same arithmetic as [`forward`], without the trace.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            next.clear();
            next.extend(w.iter().zip(b).map(|(row, &bias)| sigmoid(net_input(bias, row, &current))));
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }
}

#[inline]
fn net_input(bias: f64, row: &[f64], incoming: &[f64]) -> f64 {
    row.iter().zip(incoming).fold(bias, |acc, (w, x)| acc + w * x)
}

/// Net inputs and sigmoid outputs of every non-input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub net_inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl ActivationTrace {
    pub fn final_output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients of `E` with the same shape as the network they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParameters) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| w.iter().map(|r| vec![0.0; r.len()]).collect())
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().flatten().chain(b.iter()).copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    fn matches(&self, params: &NetworkParameters) -> bool {
        self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self.weights.iter().zip(&params.weights).all(|(g, w)| {
                g.len() == w.len() && g.iter().zip(w).all(|(gr, wr)| gr.len() == wr.len())
            })
            && self.biases.iter().zip(&params.biases).all(|(g, b)| g.len() == b.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl TrainingConfig {
    /// Learning rate used for networks shipped to ADCL clients.
    pub const CLIENT_MODEL_LEARNING_RATE: f64 = 0.3;
    /// Low learning rate for server-side retraining.
    pub const SERVER_LEARNING_RATE: f64 = 0.05;
    /// Default epoch budget for DCL networks.
    pub const DCL_EPOCHS: usize = 1000;
    /// Default epoch budget for the single-layer CL network.
    pub const CL_EPOCHS: usize = 100;

    pub fn new(learning_rate: f64, epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            epochs,
            seed,
            shuffle_each_epoch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uniform `[0, 1)` initialisation from a SplitMix64 stream.
///
/// Draw order: layer by layer, the weight matrix row-major, then that layer's biases.
pub fn init_network(spec: LayerSpec, seed: u64) -> Result<NetworkParameters> {
    spec.validate()?;
    let mut rng = SplitMix64::new(seed);
    let sizes = spec.layer_sizes();
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for pair in sizes.windows(2) {
        let (fan_in, width) = (pair[0], pair[1]);
        weights.push(
            (0..width)
                .map(|_| (0..fan_in).map(|_| rng.next_unit()).collect())
                .collect(),
        );
        biases.push((0..width).map(|_| rng.next_unit()).collect());
    }
    NetworkParameters::from_parts(spec, weights, biases)
}

pub fn forward(params: &NetworkParameters, input: &[f64]) -> Result<ActivationTrace> {
    params.check_input(input)?;
    let depth = params.spec.depth();
    let mut trace = ActivationTrace {
        net_inputs: Vec::with_capacity(depth),
        outputs: Vec::with_capacity(depth),
    };
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let incoming = if l == 0 { input } else { &trace.outputs[l - 1] };
        let nets: Vec<f64> = w.iter().zip(b).map(|(row, &bias)| net_input(bias, row, incoming)).collect();
        let outs = nets.iter().map(|&n| sigmoid(n)).collect();
        trace.net_inputs.push(nets);
        trace.outputs.push(outs);
    }
    Ok(trace)
}

pub fn squared_error(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    Ok(actual
        .iter()
        .zip(predicted)
        .map(|(a, o)| 0.5 * (a - o) * (a - o))
        .sum())
}

/// Analytic gradients of the squared error for one sample.
pub fn backprop(params: &NetworkParameters, input: &[f64], target: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params);
    let mut scratch = Scratch::new(params.spec());
    backprop_into(params, input, target, &mut scratch, &mut grads)?;
    Ok(grads)
}

/// Reusable per-sample buffers for the training loop.
struct Scratch {
    outputs: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(spec: &LayerSpec) -> Self {
        let sizes = spec.layer_sizes();
        Self {
            outputs: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Writes gradients into `grads` and returns the sample's squared error.
fn backprop_into(
    params: &NetworkParameters,
    input: &[f64],
    target: &[f64],
    scratch: &mut Scratch,
    grads: &mut GradientSet,
) -> Result<f64> {
    params.check_input(input)?;
    if target.len() != params.spec.output_count {
        return Err(Error::DimensionMismatch {
            expected: params.spec.output_count,
            actual: target.len(),
        });
    }
    let depth = params.weights.len();

    for l in 0..depth {
        let (done, rest) = scratch.outputs.split_at_mut(l);
        let incoming: &[f64] = if l == 0 { input } else { &done[l - 1] };
        for ((out, row), &bias) in rest[0].iter_mut().zip(&params.weights[l]).zip(&params.biases[l]) {
            *out = sigmoid(net_input(bias, row, incoming));
        }
    }

    let last = depth - 1;
    let mut loss = 0.0;
    for ((d, &o), &a) in scratch.deltas[last].iter_mut().zip(&scratch.outputs[last]).zip(target) {
        loss += 0.5 * (a - o) * (a - o);
        *d = (o - a) * o * (1.0 - o);
    }
    for l in (0..last).rev() {
        let (lower, upper) = scratch.deltas.split_at_mut(l + 1);
        let next_w = &params.weights[l + 1];
        for (h, (d, &o)) in lower[l].iter_mut().zip(&scratch.outputs[l]).enumerate() {
            let back: f64 = next_w.iter().zip(&upper[0]).map(|(row, dn)| row[h] * dn).sum();
            *d = back * o * (1.0 - o);
        }
    }

    for l in 0..depth {
        let incoming: &[f64] = if l == 0 { input } else { &scratch.outputs[l - 1] };
        for ((grow, gb), &d) in grads.weights[l].iter_mut().zip(grads.biases[l].iter_mut()).zip(&scratch.deltas[l]) {
            for (g, x) in grow.iter_mut().zip(incoming) {
                *g = d * x;
            }
            *gb = d;
        }
    }
    Ok(loss)
}

/// Gradient-descent step `y ← y − Γ · ∂E/∂y` on every weight and bias.
///
/// `learning_rate` may be negative (used to undo a step); it must be finite and non-zero.
pub fn apply_update(params: &NetworkParameters, grads: &GradientSet, learning_rate: f64) -> Result<NetworkParameters> {
    let mut out = params.clone();
    apply_in_place(&mut out, grads, learning_rate)?;
    Ok(out)
}

fn apply_in_place(params: &mut NetworkParameters, grads: &GradientSet, learning_rate: f64) -> Result<()> {
    if !grads.matches(params) {
        return Err(Error::ShapeMismatch("gradient set does not match network".into()));
    }
    if !(learning_rate.is_finite() && learning_rate != 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate {learning_rate}")));
    }
    if !grads.values().all(f64::is_finite) {
        return Err(Error::NonFinite("gradient set".into()));
    }
    for (w, g) in params.weights.iter_mut().zip(&grads.weights) {
        for (wr, gr) in w.iter_mut().zip(g) {
            for (wv, gv) in wr.iter_mut().zip(gr) {
                *wv -= learning_rate * gv;
            }
        }
    }
    for (b, g) in params.biases.iter_mut().zip(&grads.biases) {
        for (bv, gv) in b.iter_mut().zip(g) {
            *bv -= learning_rate * gv;
        }
    }
    Ok(())
}

/// One-hot target for `label` among `classes` outputs.
pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut t = vec![0.0; classes];
    t[label] = 1.0;
    Ok(t)
}

/// Per-sample SGD for `cfg.epochs` passes. Returns the trained copy and the mean
/// per-sample loss of each epoch (measured before each sample's update).
pub fn train(params: &NetworkParameters, data: &Dataset, cfg: &TrainingConfig) -> Result<(NetworkParameters, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.feature_count() != params.spec.input_count {
        return Err(Error::DimensionMismatch {
            expected: params.spec.input_count,
            actual: data.feature_count(),
        });
    }
    let classes = params.spec.output_count;
    let targets = data
        .samples()
        .iter()
        .map(|s| one_hot(s.label, classes))
        .collect::<Result<Vec<_>>>()?;

    let mut model = params.clone();
    let mut grads = GradientSet::zeros_like(&model);
    let mut scratch = Scratch::new(model.spec());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let sample = &data.samples()[i];
            total += backprop_into(&model, &sample.features, &targets[i], &mut scratch, &mut grads)?;
            apply_in_place(&mut model, &grads, cfg.learning_rate)?;
        }
        history.push(total / data.len() as f64);
    }
    model.trained_epochs += cfg.epochs as u64;
    Ok((model, history))
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
