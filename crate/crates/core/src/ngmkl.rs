//! The kernel network.
//!
//! For an input `x` and selected kernels `k_1 … k_S`, each kernel row
//! `K_x^j = [k_j(x, x_1), …, k_j(x, x_n)]` over the training anchors is
//! projected onto its own vector `γ_j` and squashed:
//!
//! ```text
//! z¹_j   = φ₀(γ_jᵀ K_x^j)                 j = 1 … S
//! z^{l+1} = φ_l(W_l z^l)                  l = 1 … L   (hidden layers)
//! logits = W_out z^{L+1}                  (no output nonlinearity)
//! ```
//!
//! followed by softmax and cross-entropy. With linear activations, shared
//! `γ`, a single hidden unit with weights `β`, and two outputs `[+1; −1]`, the
//! logit difference is `2 Σ_j β_j γᵀ K_x^j`, the classic MKL decision.
//!
//! Training is plain minibatch SGD with weight decay applied to every weight
//! matrix and projection vector. Bias terms are off by default.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::kernels::{gram, KernelError, KernelSpec};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Error)]
pub enum NgmklError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target class {class} out of range for {classes} classes")]
    TargetOutOfRange { class: usize, classes: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NgmklError>;

const TANH_SCALE: f64 = 1.7159;
const TANH_SLOPE: f64 = 2.0 / 3.0;

/// `1.7159 · tanh(2x/3)`
#[inline]
pub fn scaled_tanh(x: f64) -> f64 {
    TANH_SCALE * (TANH_SLOPE * x).tanh()
}

/// `1.7159 · (2/3) · sech²(2x/3)`
#[inline]
pub fn scaled_tanh_prime(x: f64) -> f64 {
    let t = (TANH_SLOPE * x).tanh();
    TANH_SCALE * TANH_SLOPE * (1.0 - t * t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    ScaledTanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ScaledTanh => scaled_tanh(x),
            Activation::Linear => x,
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::ScaledTanh => scaled_tanh_prime(x),
            Activation::Linear => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::ScaledTanh => 0,
            Activation::Linear => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::ScaledTanh),
            1 => Ok(Activation::Linear),
            _ => Err(NgmklError::Format(format!("unknown activation code {c}"))),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// `−z_k + log Σ_j exp(z_j)`
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(NgmklError::TargetOutOfRange {
            class: target,
            classes: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[target])
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A kernel picked from the bank, remembered by its bank position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedKernel {
    pub bank_index: usize,
    pub spec: KernelSpec,
}

/// Fully connected layer `φ(W h + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgmklModel {
    pub kernels: Vec<SelectedKernel>,
    /// Training features the kernel rows are computed against.
    pub anchors: Matrix,
    /// One projection vector per selected kernel, each of anchor length.
    pub gammas: Vec<Vec<f64>>,
    pub kernel_bias: Option<Vec<f64>>,
    pub kernel_activation: Activation,
    /// Hidden layers followed by the (linear) output layer.
    pub layers: Vec<DenseLayer>,
}

impl NgmklModel {
    /// Checks every shape invariant and that all weights are finite.
    pub fn validate(&self) -> Result<()> {
        let s = self.kernels.len();
        let n = self.anchors.rows();
        if s == 0 {
            return Err(NgmklError::Shape("no kernels".into()));
        }
        if self.gammas.len() != s || self.gammas.iter().any(|g| g.len() != n) {
            return Err(NgmklError::Shape(format!("need {s} projection vectors of length {n}")));
        }
        if let Some(b) = &self.kernel_bias {
            if b.len() != s {
                return Err(NgmklError::Shape("kernel bias length".into()));
            }
        }
        if self.layers.is_empty() {
            return Err(NgmklError::Shape("missing output layer".into()));
        }
        let mut width = s;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.inputs() != width {
                return Err(NgmklError::Shape(format!(
                    "layer {l} expects {} inputs, previous width is {width}",
                    layer.inputs()
                )));
            }
            if let Some(b) = &layer.bias {
                if b.len() != layer.outputs() {
                    return Err(NgmklError::Shape(format!("layer {l} bias length")));
                }
            }
            width = layer.outputs();
        }
        if self.layers.last().unwrap().activation != Activation::Linear {
            return Err(NgmklError::Shape("output layer must be linear".into()));
        }
        if !self.flat_params().iter().all(|v| v.is_finite()) {
            return Err(NgmklError::Shape("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.rows()
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    /// First dense layer, `n₁ × S`.
    pub fn hidden_weights(&self) -> &Matrix {
        &self.layers[0].weights
    }

    /// Last layer, `C × n_L`.
    pub fn output_weights(&self) -> &Matrix {
        &self.layers.last().unwrap().weights
    }

    /// All trainable values in a fixed order: γ's, kernel bias, then each
    /// layer's weights and bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.gammas {
            out.extend_from_slice(g);
        }
        if let Some(b) = &self.kernel_bias {
            out.extend_from_slice(b);
        }
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            if let Some(b) = &layer.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    /// Inverse of [`NgmklModel::flat_params`].
    pub fn set_flat_params(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut [f64]| {
            for d in dst {
                *d = it.next().expect("parameter vector too short");
            }
        };
        for g in &mut self.gammas {
            fill(g);
        }
        if let Some(b) = &mut self.kernel_bias {
            fill(b);
        }
        for layer in &mut self.layers {
            fill(layer.weights.as_mut_slice());
            if let Some(b) = &mut layer.bias {
                fill(b);
            }
        }
    }
}

/// Intermediate values of one forward pass, needed by [`backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub kernel_rows: Vec<Vec<f64>>,
    /// `γ_jᵀ K_x^j (+ b_j)` per kernel.
    pub kernel_pre: Vec<f64>,
    /// `Z¹`
    pub kernel_out: Vec<f64>,
    /// Pre-activation of every dense layer (the last one equals the logits).
    pub layer_pre: Vec<Vec<f64>>,
    pub layer_out: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.layer_out.last().expect("at least one layer")
    }
}

/// Runs the network on the kernel rows of a single input, one row per
/// selected kernel, in the model's kernel order.
pub fn forward(model: &NgmklModel, kernel_rows: &[&[f64]]) -> Result<(Vec<f64>, ForwardCache)> {
    let n = model.anchor_count();
    if kernel_rows.len() != model.kernel_count() || kernel_rows.iter().any(|r| r.len() != n) {
        return Err(NgmklError::Shape(format!(
            "expected {} kernel rows of length {n}",
            model.kernel_count()
        )));
    }
    let cache = forward_unchecked(model, kernel_rows);
    Ok((cache.logits().to_vec(), cache))
}

fn forward_unchecked(model: &NgmklModel, kernel_rows: &[&[f64]]) -> ForwardCache {
    let mut kernel_pre: Vec<f64> = model
        .gammas
        .iter()
        .zip(kernel_rows)
        .map(|(g, k)| dot(g, k))
        .collect();
    if let Some(b) = &model.kernel_bias {
        kernel_pre.iter_mut().zip(b).for_each(|(u, b)| *u += b);
    }
    let kernel_out: Vec<f64> = kernel_pre.iter().map(|&u| model.kernel_activation.apply(u)).collect();
    let mut layer_pre = Vec::with_capacity(model.layers.len());
    let mut layer_out: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let input = layer_out.last().unwrap_or(&kernel_out);
        let mut a = layer.weights.mul_vec(input);
        if let Some(b) = &layer.bias {
            a.iter_mut().zip(b).for_each(|(x, b)| *x += b);
        }
        let h: Vec<f64> = a.iter().map(|&x| layer.activation.apply(x)).collect();
        layer_pre.push(a);
        layer_out.push(h);
    }
    ForwardCache {
        kernel_rows: kernel_rows.iter().map(|r| r.to_vec()).collect(),
        kernel_pre,
        kernel_out,
        layer_pre,
        layer_out,
    }
}

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub gammas: Vec<Vec<f64>>,
    pub kernel_bias: Option<Vec<f64>>,
    pub layers: Vec<(Matrix, Option<Vec<f64>>)>,
}

impl Gradients {
    pub fn zeros_like(model: &NgmklModel) -> Self {
        Gradients {
            gammas: model.gammas.iter().map(|g| vec![0.0; g.len()]).collect(),
            kernel_bias: model.kernel_bias.as_ref().map(|b| vec![0.0; b.len()]),
            layers: model
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.outputs(), l.inputs()),
                        l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                    )
                })
                .collect(),
        }
    }

    fn fill_zero(&mut self) {
        self.gammas.iter_mut().for_each(|g| g.fill(0.0));
        if let Some(b) = &mut self.kernel_bias {
            b.fill(0.0);
        }
        for (w, b) in &mut self.layers {
            w.as_mut_slice().fill(0.0);
            if let Some(b) = b {
                b.fill(0.0);
            }
        }
    }

    fn scale(&mut self, s: f64) {
        self.gammas.iter_mut().flatten().for_each(|v| *v *= s);
        if let Some(b) = &mut self.kernel_bias {
            b.iter_mut().for_each(|v| *v *= s);
        }
        for (w, b) in &mut self.layers {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            if let Some(b) = b {
                b.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Same order as [`NgmklModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.gammas {
            out.extend_from_slice(g);
        }
        if let Some(b) = &self.kernel_bias {
            out.extend_from_slice(b);
        }
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            if let Some(b) = b {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_cache(model: &NgmklModel, cache: &ForwardCache) -> Result<()> {
    let ok = cache.kernel_rows.len() == model.kernel_count()
        && cache.kernel_rows.iter().all(|r| r.len() == model.anchor_count())
        && cache.kernel_pre.len() == model.kernel_count()
        && cache.layer_pre.len() == model.layers.len()
        && cache
            .layer_pre
            .iter()
            .zip(&model.layers)
            .all(|(a, l)| a.len() == l.outputs());
    if ok {
        Ok(())
    } else {
        Err(NgmklError::Shape("forward cache does not match model".into()))
    }
}

/// Exact gradient of the cross-entropy of one sample with respect to every parameter.
pub fn backward(model: &NgmklModel, cache: &ForwardCache, target: usize) -> Result<Gradients> {
    check_cache(model, cache)?;
    if target >= model.class_count() {
        return Err(NgmklError::TargetOutOfRange {
            class: target,
            classes: model.class_count(),
        });
    }
    let mut grads = Gradients::zeros_like(model);
    accumulate(model, cache, target, &mut grads);
    Ok(grads)
}

/// Adds the gradient of one sample into `grads`; returns the sample loss.
fn accumulate(model: &NgmklModel, cache: &ForwardCache, target: usize, grads: &mut Gradients) -> f64 {
    let logits = cache.logits();
    let loss = log_sum_exp(logits) - logits[target];
    // ∂J/∂logits = softmax − one-hot
    let mut delta = softmax(logits);
    delta[target] -= 1.0;

    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        if layer.activation != Activation::Linear {
            for (d, &a) in delta.iter_mut().zip(&cache.layer_pre[l]) {
                *d *= layer.activation.derivative(a);
            }
        }
        let input = if l == 0 {
            &cache.kernel_out
        } else {
            &cache.layer_out[l - 1]
        };
        let (gw, gb) = &mut grads.layers[l];
        for (r, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                for (g, &x) in gw.row_mut(r).iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        if let Some(gb) = gb {
            gb.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
        }
        delta = layer.weights.tr_mul_vec(&delta);
    }

    for (j, d) in delta.iter_mut().enumerate() {
        *d *= model.kernel_activation.derivative(cache.kernel_pre[j]);
    }
    for (j, &d) in delta.iter().enumerate() {
        if d != 0.0 {
            for (g, &k) in grads.gammas[j].iter_mut().zip(&cache.kernel_rows[j]) {
                *g += d * k;
            }
        }
    }
    if let Some(gb) = &mut grads.kernel_bias {
        gb.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
    }
    loss
}

/// `w ← w − lr·(g + λ·w)` on γ's and weight matrices; biases get `w ← w − lr·g`.
pub fn sgd_step(model: &mut NgmklModel, grads: &Gradients, learning_rate: f64, weight_decay: f64) {
    let decayed = |w: &mut [f64], g: &[f64]| {
        for (w, g) in w.iter_mut().zip(g) {
            *w -= learning_rate * (g + weight_decay * *w);
        }
    };
    let plain = |w: &mut [f64], g: &[f64]| {
        for (w, g) in w.iter_mut().zip(g) {
            *w -= learning_rate * g;
        }
    };
    for (w, g) in model.gammas.iter_mut().zip(&grads.gammas) {
        decayed(w, g);
    }
    if let (Some(w), Some(g)) = (&mut model.kernel_bias, &grads.kernel_bias) {
        plain(w, g);
    }
    for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads.layers) {
        decayed(layer.weights.as_mut_slice(), gw.as_slice());
        if let (Some(w), Some(g)) = (&mut layer.bias, gb) {
            plain(w, g);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Width of each hidden layer; the default is a single layer of 64 units.
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
    pub kernel_activation: Activation,
    pub hidden_activation: Activation,
    pub use_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 40,
            learning_rate: 0.01,
            weight_decay: 5e-6,
            epochs: 200,
            hidden_widths: vec![64],
            seed: 0,
            kernel_activation: Activation::ScaledTanh,
            hidden_activation: Activation::ScaledTanh,
            use_bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NgmklError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.batch_size > train_size {
            return Err(NgmklError::InvalidConfig(format!(
                "batch_size {} exceeds training size {train_size}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NgmklError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NgmklError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(NgmklError::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

fn uniform_fill<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f64> {
    let limit = (3.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Weights drawn uniformly from `±√(3 / fan_in)`, biases zero.
pub fn init_model<R: Rng>(
    kernels: &[SelectedKernel],
    anchors: Matrix,
    class_count: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> NgmklModel {
    let n = anchors.rows();
    let s = kernels.len();
    let gammas = (0..s).map(|_| uniform_fill(rng, n, n)).collect();
    let mut layers = Vec::new();
    let mut width = s;
    let outs = config.hidden_widths.iter().copied().chain(std::iter::once(class_count));
    let hidden_count = config.hidden_widths.len();
    for (l, out) in outs.enumerate() {
        let weights = Matrix::from_vec(out, width, uniform_fill(rng, out * width, width));
        layers.push(DenseLayer {
            weights,
            bias: config.use_bias.then(|| vec![0.0; out]),
            activation: if l < hidden_count {
                config.hidden_activation
            } else {
                Activation::Linear
            },
        });
        width = out;
    }
    NgmklModel {
        kernels: kernels.to_vec(),
        anchors,
        gammas,
        kernel_bias: config.use_bias.then(|| vec![0.0; s]),
        kernel_activation: config.kernel_activation,
        layers,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: NgmklModel,
    /// Entry `e` evaluates the model after `e` epochs (entry 0 is the initialisation).
    pub curve: Vec<EpochStats>,
}

/// Computes the training self-Grams of the selected kernels, then trains.
pub fn train(train_data: &Dataset, kernels: &[SelectedKernel], config: &TrainConfig) -> Result<TrainedModel> {
    let x = train_data.features();
    let grams = kernels
        .iter()
        .map(|k| gram(&k.spec, x, x).map(|g| g.values))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let refs: Vec<&Matrix> = grams.iter().collect();
    train_with_grams(train_data, kernels, &refs, config)
}

/// Trains on precomputed training self-Grams, one per selected kernel.
pub fn train_with_grams(
    train_data: &Dataset,
    kernels: &[SelectedKernel],
    grams: &[&Matrix],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    let n = train_data.len();
    config.validate(n)?;
    if kernels.is_empty() {
        return Err(NgmklError::Shape("no kernels selected".into()));
    }
    if grams.len() != kernels.len() || grams.iter().any(|g| g.shape() != (n, n)) {
        return Err(NgmklError::Shape(format!("need {} training Grams of size {n}x{n}", kernels.len())));
    }
    let labels = train_data.labels();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(NgmklError::DegenerateData("training labels contain a single class".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(
        kernels,
        train_data.features().clone(),
        train_data.class_count(),
        config,
        &mut rng,
    );
    let rows_of = |i: usize| -> Vec<&[f64]> { grams.iter().map(|g| g.row(i)).collect() };

    let evaluate = |model: &NgmklModel, epoch: usize| {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for i in 0..n {
            let cache = forward_unchecked(model, &rows_of(i));
            let logits = cache.logits();
            loss += log_sum_exp(logits) - logits[labels[i]];
            if argmax(logits) == labels[i] {
                correct += 1;
            }
        }
        EpochStats {
            epoch,
            mean_loss: loss / n as f64,
            train_accuracy: correct as f64 / n as f64,
        }
    };

    let mut curve = Vec::with_capacity(config.epochs + 1);
    curve.push(evaluate(&model, 0));
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = Gradients::zeros_like(&model);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let cache = forward_unchecked(&model, &rows_of(i));
                accumulate(&model, &cache, labels[i], &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model, &grads, config.learning_rate, config.weight_decay);
        }
        curve.push(evaluate(&model, epoch));
    }
    Ok(TrainedModel { model, curve })
}

/// Logits for every row of `features`, using the model's anchors.
pub fn predict_logits(model: &NgmklModel, features: &Matrix) -> Result<Vec<Vec<f64>>> {
    if features.cols() != model.anchors.cols() {
        return Err(NgmklError::Shape(format!(
            "features have {} columns, anchors have {}",
            features.cols(),
            model.anchors.cols()
        )));
    }
    let grams = model
        .kernels
        .iter()
        .map(|k| gram(&k.spec, features, &model.anchors).map(|g| g.values))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((0..features.rows())
        .map(|i| {
            let rows: Vec<&[f64]> = grams.iter().map(|g| g.row(i)).collect();
            forward_unchecked(model, &rows).logits().to_vec()
        })
        .collect())
}

/// Predicted class per row: argmax of the logits, lowest class on ties.
pub fn predict(model: &NgmklModel, features: &Matrix) -> Result<Vec<usize>> {
    Ok(predict_logits(model, features)?.iter().map(|z| argmax(z)).collect())
}

/// `epoch,mean_loss,train_accuracy` per line.
pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy\n");
    for e in curve {
        writeln!(out, "{},{},{}", e.epoch, e.mean_loss, e.train_accuracy).unwrap();
    }
    out
}

const MODEL_MAGIC: &[u8; 8] = b"NGMKLMDL";
const MODEL_VERSION: u32 = 1;

/// Binary model file, all little-endian:
///
/// ```text
/// magic "NGMKLMDL" | version u32 | S u32
/// S × (bank_index u32, kind u8 (0 poly, 1 gauss), param f64)
/// anchors: rows u64, cols u64, rows·cols f64
/// kernel activation u8 | kernel bias flag u8 | S·n f64 γ | [S f64 bias]
/// layer count u32, then per layer:
///   rows u32, cols u32, activation u8, bias flag u8, rows·cols f64, [rows f64]
/// ```
pub fn write_model<W: Write>(model: &NgmklModel, mut w: W) -> Result<()> {
    model.validate()?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(model.kernels.len() as u32).to_le_bytes())?;
    for k in &model.kernels {
        w.write_all(&(k.bank_index as u32).to_le_bytes())?;
        let (kind, param) = match k.spec {
            KernelSpec::Polynomial { degree } => (0u8, degree as f64),
            KernelSpec::Gaussian { sigma } => (1u8, sigma),
        };
        w.write_all(&[kind])?;
        w.write_all(&param.to_le_bytes())?;
    }
    w.write_all(&(model.anchors.rows() as u64).to_le_bytes())?;
    w.write_all(&(model.anchors.cols() as u64).to_le_bytes())?;
    write_f64s(&mut w, model.anchors.as_slice())?;
    w.write_all(&[model.kernel_activation.code(), model.kernel_bias.is_some() as u8])?;
    for g in &model.gammas {
        write_f64s(&mut w, g)?;
    }
    if let Some(b) = &model.kernel_bias {
        write_f64s(&mut w, b)?;
    }
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        w.write_all(&(layer.outputs() as u32).to_le_bytes())?;
        w.write_all(&(layer.inputs() as u32).to_le_bytes())?;
        w.write_all(&[layer.activation.code(), layer.bias.is_some() as u8])?;
        write_f64s(&mut w, layer.weights.as_slice())?;
        if let Some(b) = &layer.bias {
            write_f64s(&mut w, b)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<NgmklModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(NgmklError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(NgmklError::Format(format!("unsupported version {version}")));
    }
    let s = read_u32(&mut r)? as usize;
    let mut kernels = Vec::with_capacity(s);
    for _ in 0..s {
        let bank_index = read_u32(&mut r)? as usize;
        let kind = read_u8(&mut r)?;
        let param = read_f64s(&mut r, 1)?[0];
        let spec = match kind {
            0 if param.fract() == 0.0 && param >= 1.0 && param <= u32::MAX as f64 => KernelSpec::Polynomial {
                degree: param as u32,
            },
            1 => KernelSpec::gaussian(param)?,
            _ => return Err(NgmklError::Format(format!("bad kernel encoding {kind}/{param}"))),
        };
        kernels.push(SelectedKernel { bank_index, spec });
    }
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let anchors = Matrix::from_vec(rows, cols, read_f64s(&mut r, checked_len(rows, cols)?)?);
    let kernel_activation = Activation::from_code(read_u8(&mut r)?)?;
    let has_kernel_bias = read_u8(&mut r)? != 0;
    let gammas = (0..s).map(|_| read_f64s(&mut r, rows)).collect::<Result<Vec<_>>>()?;
    let kernel_bias = if has_kernel_bias {
        Some(read_f64s(&mut r, s)?)
    } else {
        None
    };
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let out = read_u32(&mut r)? as usize;
        let inp = read_u32(&mut r)? as usize;
        let activation = Activation::from_code(read_u8(&mut r)?)?;
        let has_bias = read_u8(&mut r)? != 0;
        let weights = Matrix::from_vec(out, inp, read_f64s(&mut r, checked_len(out, inp)?)?);
        let bias = if has_bias { Some(read_f64s(&mut r, out)?) } else { None };
        layers.push(DenseLayer {
            weights,
            bias,
            activation,
        });
    }
    let model = NgmklModel {
        kernels,
        anchors,
        gammas,
        kernel_bias,
        kernel_activation,
        layers,
    };
    model.validate()?;
    Ok(model)
}

fn checked_len(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .filter(|&l| l <= (1 << 32))
        .ok_or_else(|| NgmklError::Format("tensor too large".into()))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gaussian_blobs;

    fn random_model(seed: u64, n: usize, s: usize, hidden: &[usize], classes: usize, bias: bool) -> NgmklModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let kernels: Vec<SelectedKernel> = (0..s)
            .map(|j| SelectedKernel {
                bank_index: j,
                spec: KernelSpec::Gaussian { sigma: 1.0 + j as f64 },
            })
            .collect();
        let config = TrainConfig {
            hidden_widths: hidden.to_vec(),
            use_bias: bias,
            ..TrainConfig::default()
        };
        let mut model = init_model(&kernels, anchors, classes, &config, &mut rng);
        if let Some(b) = &mut model.kernel_bias {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        for layer in &mut model.layers {
            if let Some(b) = &mut layer.bias {
                b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
            }
        }
        model
    }

    fn loss_at(model: &NgmklModel, rows: &[&[f64]], target: usize) -> f64 {
        let (z, _) = forward(model, rows).unwrap();
        cross_entropy(&z, target).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0);
        let ce = cross_entropy(&[0.0, 0.0], 1).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&[0.0, 0.0], 2),
            Err(NgmklError::TargetOutOfRange { class: 2, classes: 2 })
        ));
    }

    #[test]
    fn scaled_tanh_values() {
        assert_eq!(scaled_tanh(0.0), 0.0);
        assert!((scaled_tanh(1.5) - 1.7159 * 1.0f64.tanh()).abs() < 1e-15);
        assert!((scaled_tanh_prime(0.0) - 1.7159 * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn gradients_match_central_differences() {
        for (seed, hidden, bias) in [(1, vec![3], false), (2, vec![4, 3], true), (3, vec![], false)] {
            let model = random_model(seed, 5, 3, &hidden, 3, bias);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let target = 1;
            let (_, cache) = forward(&model, &refs).unwrap();
            let analytic = backward(&model, &cache, target).unwrap().flatten();
            let theta = model.flat_params();
            assert_eq!(analytic.len(), theta.len());
            let h = 1e-5;
            let mut probe = model.clone();
            for p in 0..theta.len() {
                let mut t = theta.clone();
                t[p] += h;
                probe.set_flat_params(&t);
                let up = loss_at(&probe, &refs, target);
                t[p] -= 2.0 * h;
                probe.set_flat_params(&t);
                let down = loss_at(&probe, &refs, target);
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic[p].abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic[p] - numeric).abs() / denom < 1e-5,
                    "param {p}: {} vs {numeric}",
                    analytic[p]
                );
            }
        }
    }

    #[test]
    fn linear_network_collapses_to_mkl_decision() {
        let n = 4;
        let mut model = random_model(7, n, 3, &[1], 2, false);
        model.kernel_activation = Activation::Linear;
        model.layers[0].activation = Activation::Linear;
        let gamma = vec![0.3, -0.2, 0.5, 0.1];
        let beta = [0.2, 0.5, 0.3];
        model.gammas = vec![gamma.clone(); 3];
        model.layers[0].weights = Matrix::from_vec(1, 3, beta.to_vec());
        model.layers[1].weights = Matrix::from_vec(2, 1, vec![1.0, -1.0]);
        let rows = [vec![1.0, 0.5, 0.2, 0.0], vec![0.3, 0.3, 0.9, 0.1], vec![0.0, 1.0, 0.4, 0.7]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let (z, _) = forward(&model, &refs).unwrap();
        let mut expected = 0.0;
        for j in 0..3 {
            for i in 0..n {
                expected += beta[j] * gamma[i] * rows[j][i];
            }
        }
        assert!((z[0] - z[1] - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_scalar_check() {
        let mut model = random_model(3, 2, 1, &[], 2, true);
        model.gammas = vec![vec![1.0, -2.0]];
        let mut grads = Gradients::zeros_like(&model);
        grads.gammas[0] = vec![0.5, 0.0];
        grads.kernel_bias = Some(vec![1.0]);
        let bias_before = model.kernel_bias.as_ref().unwrap()[0];
        sgd_step(&mut model, &grads, 0.1, 0.01);
        assert!((model.gammas[0][0] - (1.0 - 0.1 * (0.5 + 0.01))).abs() < 1e-15);
        assert!((model.gammas[0][1] - (-2.0 - 0.1 * (0.0 - 0.02))).abs() < 1e-15);
        assert!((model.kernel_bias.as_ref().unwrap()[0] - (bias_before - 0.1)).abs() < 1e-15);
    }

    fn blob_kernels() -> Vec<SelectedKernel> {
        vec![
            SelectedKernel {
                bank_index: 0,
                spec: KernelSpec::Polynomial { degree: 1 },
            },
            SelectedKernel {
                bank_index: 9,
                spec: KernelSpec::Gaussian { sigma: 2.0 },
            },
        ]
    }

    #[test]
    fn learns_separable_blobs() {
        let data = gaussian_blobs(40, 3, 3.0, 5);
        let config = TrainConfig {
            epochs: 60,
            batch_size: 10,
            hidden_widths: vec![8],
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let trained = train(&data, &blob_kernels(), &config).unwrap();
        assert_eq!(trained.curve.len(), 61);
        let last = trained.curve.last().unwrap();
        assert!(last.train_accuracy >= 0.98, "{last:?}");
        assert!(last.mean_loss < trained.curve[0].mean_loss);
        let test = gaussian_blobs(50, 3, 3.0, 99);
        let pred = predict(&trained.model, test.features()).unwrap();
        let acc = pred.iter().zip(test.labels()).filter(|(a, b)| a == b).count() as f64 / 100.0;
        assert!(acc >= 0.95, "test accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic_and_zero_epochs_is_init() {
        let data = gaussian_blobs(10, 2, 2.0, 1);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 5,
            hidden_widths: vec![4],
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&data, &blob_kernels(), &config).unwrap();
        let b = train(&data, &blob_kernels(), &config).unwrap();
        assert_eq!(a.model.flat_params(), b.model.flat_params());
        assert_eq!(a.curve, b.curve);

        let zero = train(&data, &blob_kernels(), &TrainConfig { epochs: 0, ..config.clone() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = init_model(&blob_kernels(), data.features().clone(), 2, &config, &mut rng);
        assert_eq!(zero.model, init);
        assert_eq!(zero.curve.len(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = gaussian_blobs(5, 2, 2.0, 1);
        let big = TrainConfig {
            batch_size: 11,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &blob_kernels(), &big), Err(NgmklError::InvalidConfig(_))));
        let one_class = data.subset(&[0, 2, 4]);
        let small = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&one_class, &blob_kernels(), &small),
            Err(NgmklError::DegenerateData(_))
        ));
        let model = random_model(1, 3, 2, &[2], 2, false);
        assert!(forward(&model, &[&[0.0; 3]]).is_err());
    }

    #[test]
    fn model_file_round_trips_bit_exact() {
        let model = random_model(4, 6, 2, &[3, 2], 3, true);
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let bits = |m: &NgmklModel| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
        buf[0] = b'X';
        assert!(matches!(read_model(buf.as_slice()), Err(NgmklError::Format(_))));
    }

    #[test]
    fn curve_csv_format() {
        let csv = curve_csv(&[EpochStats {
            epoch: 0,
            mean_loss: 0.5,
            train_accuracy: 1.0,
        }]);
        assert_eq!(csv, "epoch,mean_loss,train_accuracy\n0,0.5,1\n");
    }
}
