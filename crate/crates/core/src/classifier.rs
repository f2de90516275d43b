//! Four-layer feed-forward classifier trained with class-weighted
//! cross-entropy and Adam.
//!
//! Layout: `input -> h1 -> h2 -> h3 -> 2`, ReLU after each hidden layer, raw
//! logits at the output. Logit index 1 is the mutant class. Weights are stored
//! as `(fan_in, fan_out)` matrices so a batch forward pass is `X · W + b`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::embedding::NormalizationStats;
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 3] = [512, 256, 64];
pub const NUM_CLASSES: usize = 2;
/// Probability at or above which the mutant class is predicted.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    pub seed: u64,
}

fn check_dims(input_dim: usize, hidden_dims: &[usize]) -> Result<()> {
    if input_dim == 0 {
        return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
    }
    if hidden_dims.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected exactly 3 hidden widths, got {}",
            hidden_dims.len()
        )));
    }
    if hidden_dims.contains(&0) {
        return Err(Error::InvalidArgument("hidden widths must be >= 1".into()));
    }
    Ok(())
}

/// He-normal weights from a ChaCha generator seeded with `seed`; zero biases.
pub fn init_model(input_dim: usize, hidden_dims: &[usize], seed: u64) -> Result<MlpModel> {
    check_dims(input_dim, hidden_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = layer_dims(input_dim, hidden_dims);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.sample(normal));
            DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpModel {
        layer_dims: dims,
        layers,
        activation: Activation::Relu,
        seed,
    })
}

fn layer_dims(input_dim: usize, hidden_dims: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(5);
    dims.push(input_dim);
    dims.extend_from_slice(hidden_dims);
    dims.push(NUM_CLASSES);
    dims
}

impl MlpModel {
    /// All-zero parameters; every input maps to logits [0, 0].
    pub fn zeros(input_dim: usize, hidden_dims: &[usize]) -> Result<Self> {
        check_dims(input_dim, hidden_dims)?;
        let dims = layer_dims(input_dim, hidden_dims);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(MlpModel {
            layer_dims: dims,
            layers,
            activation: Activation::Relu,
            seed: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Activations of every layer: index 0 is the input, the last entry the logits.
    fn forward_trace(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(self.forward_trace(x).pop().expect("logits"))
    }

    /// Weighted cross-entropy and exact parameter gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        class_weights: [f64; 2],
    ) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        if labels.len() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        let acts = self.forward_trace(x);
        let (loss, mut delta) = weighted_ce_loss(acts.last().expect("logits").view(), labels, class_weights)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let dw = input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights.t());
                // ReLU derivative from the post-activation of layer i-1.
                prev.zip_mut_with(input, |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push(LayerGrads { weights: dw, bias: db });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }
}

fn log_softmax_row(z0: f64, z1: f64) -> [f64; 2] {
    let m = z0.max(z1);
    let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
    [z0 - lse, z1 - lse]
}

pub fn softmax_row(z0: f64, z1: f64) -> [f64; 2] {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Weighted mean cross-entropy `Σ w_y·(−log p_y) / Σ w_y` and its gradient
/// with respect to the logits.
pub fn weighted_ce_loss(
    logits: ArrayView2<f64>,
    labels: &[usize],
    class_weights: [f64; 2],
) -> Result<(f64, Array2<f64>)> {
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::Dimension {
            expected: NUM_CLASSES,
            got: logits.ncols(),
        });
    }
    if labels.len() != logits.nrows() || labels.is_empty() {
        return Err(Error::InvalidArgument(
            "labels must be non-empty and match the batch".into(),
        ));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite logits".into()));
    }
    if class_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::InvalidArgument("class weights must be positive".into()));
    }
    if let Some(bad) = labels.iter().find(|l| **l >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let total_w: f64 = labels.iter().map(|l| class_weights[*l]).sum();
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let (z0, z1) = (logits[[i, 0]], logits[[i, 1]]);
        let logp = log_softmax_row(z0, z1);
        let p = softmax_row(z0, z1);
        let w = class_weights[y] / total_w;
        loss -= w * logp[y];
        for c in 0..NUM_CLASSES {
            let target = if c == y { 1.0 } else { 0.0 };
            grad[[i, c]] = w * (p[c] - target);
        }
    }
    Ok((loss, grad))
}

/// `w_c = N / (K · N_c)` in the order of `counts`.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "every class needs at least one sample, got counts {counts:?}"
        )));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|c| n as f64 / (k * *c as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `false`: L2 term added to the gradient. `true`: AdamW-style decay.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            decoupled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState {
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }
}

/// One Adam update over flat slices; `step` is the 1-based step count.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..params.len() {
        let mut g = grads[i];
        if !cfg.decoupled {
            g += cfg.weight_decay * params[i];
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        if cfg.decoupled {
            params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
        }
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.layers.len() != model.layers.len() || state.m.layers.len() != model.layers.len() {
        return Err(Error::InvalidArgument("optimizer state does not match model".into()));
    }
    state.step += 1;
    let step = state.step;
    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut())
        .zip(state.v.layers.iter_mut())
    {
        if layer.weights.raw_dim() != g.weights.raw_dim() || layer.bias.len() != g.bias.len() {
            return Err(Error::InvalidArgument("gradient shape mismatch".into()));
        }
        adam_update(
            layer.weights.as_slice_mut().expect("standard layout"),
            g.weights.as_slice().expect("standard layout"),
            m.weights.as_slice_mut().expect("standard layout"),
            v.weights.as_slice_mut().expect("standard layout"),
            step,
            cfg,
        );
        adam_update(
            layer.bias.as_slice_mut().expect("contiguous"),
            g.bias.as_slice().expect("contiguous"),
            m.bias.as_slice_mut().expect("contiguous"),
            v.bias.as_slice_mut().expect("contiguous"),
            step,
            cfg,
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeights {
    /// Written as the string "auto".
    Auto(AutoWeights),
    /// `[wildtype, mutant]`.
    Explicit([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoWeights {
    #[serde(alias = "auto")]
    AutoInverseFrequency,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights::Auto(AutoWeights::AutoInverseFrequency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub class_weights: ClassWeights,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub decoupled_weight_decay: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_wd() -> f64 {
    1e-5
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    100
}
fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            weight_decay: default_wd(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            class_weights: ClassWeights::default(),
            hidden_dims: default_hidden(),
            decoupled_weight_decay: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if let ClassWeights::Explicit(w) = &self.class_weights {
            if w.iter().any(|x| x.is_nan() || *x <= 0.0) {
                return Err(Error::Config("explicit class weights must be > 0".into()));
            }
        }
        check_dims(1, &self.hidden_dims).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Resolves class weights for a label set (labels are class indices).
    pub fn resolve_class_weights(&self, labels: &[usize]) -> Result<[f64; 2]> {
        match &self.class_weights {
            ClassWeights::Explicit(w) => Ok(*w),
            ClassWeights::Auto(_) => {
                let mut counts = [0usize; 2];
                for l in labels {
                    counts[*l] += 1;
                }
                let w = inverse_frequency_weights(&counts).map_err(|_| {
                    Error::InvalidArgument(format!(
                        "automatic class weights need both classes, got counts {counts:?}"
                    ))
                })?;
                Ok([w[0], w[1]])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch training with a per-epoch seeded shuffle. Runs
/// `epochs × ⌈n / batch_size⌉` optimizer steps.
pub fn train(
    mut model: MlpModel,
    x: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if x.nrows() == 0 || x.nrows() != labels.len() {
        return Err(Error::InvalidArgument(
            "training data must be non-empty with one label per row".into(),
        ));
    }
    model.check_input(&x)?;
    let weights = config.resolve_class_weights(labels)?;
    let adam = config.adam();
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(xb.view(), &yb, weights)?;
            adam_step(&mut model, &grads, &mut state, &adam)?;
            epoch_loss += loss * batch.len() as f64;
        }
        loss_curve.push(epoch_loss / x.nrows() as f64);
    }
    if !model.is_finite() {
        return Err(Error::Validation("training diverged to non-finite parameters".into()));
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// Probability of the mutant class for each row.
pub fn predict_proba_batch(model: &MlpModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    let logits = model.forward(x)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|r| softmax_row(r[0], r[1])[1])
        .collect())
}

pub fn predict_proba(model: &MlpModel, vector: &[f64]) -> Result<f64> {
    let x = ArrayView2::from_shape((1, vector.len()), vector)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(predict_proba_batch(model, x)?[0])
}

pub fn predict_label(p_mutant: f64) -> usize {
    usize::from(p_mutant >= DECISION_THRESHOLD)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `(fan_in, fan_out)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// On-disk checkpoint: architecture plus parameters, optionally with the
/// normalization fitted alongside the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationStats>,
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel, normalization: Option<NormalizationStats>) -> Self {
        Checkpoint {
            layer_dims: model.layer_dims.clone(),
            activation: model.activation,
            seed: model.seed,
            layers: model
                .layers
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.weights.nrows(),
                    fan_out: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            normalization,
        }
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        if self.layer_dims.len() != 5 || self.layers.len() != 4 {
            return Err(Error::Validation("checkpoint must describe four layers".into()));
        }
        if *self.layer_dims.last().expect("len 5") != NUM_CLASSES {
            return Err(Error::Validation("checkpoint output dimension must be 2".into()));
        }
        let mut layers = Vec::with_capacity(4);
        for (i, rec) in self.layers.iter().enumerate() {
            if rec.fan_in != self.layer_dims[i] || rec.fan_out != self.layer_dims[i + 1] {
                return Err(Error::Validation(format!("layer {i} shape disagrees with layer_dims")));
            }
            let weights = Array2::from_shape_vec((rec.fan_in, rec.fan_out), rec.weights.clone())
                .map_err(|e| Error::Validation(e.to_string()))?;
            if rec.bias.len() != rec.fan_out {
                return Err(Error::Validation(format!("layer {i} bias length")));
            }
            layers.push(DenseLayer {
                weights,
                bias: Array1::from(rec.bias.clone()),
            });
        }
        let model = MlpModel {
            layer_dims: self.layer_dims.clone(),
            layers,
            activation: self.activation,
            seed: self.seed,
        };
        if !model.is_finite() {
            return Err(Error::Validation("checkpoint has non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(768, &DEFAULT_HIDDEN, 42).unwrap();
        let b = init_model(768, &DEFAULT_HIDDEN, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(768, &DEFAULT_HIDDEN, 43).unwrap());
        assert_eq!(a.layers.len(), 4);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn parameter_count_matches_arithmetic() {
        let m = init_model(768, &[512, 256, 64], 1).unwrap();
        let expected = 768 * 512 + 512 + 512 * 256 + 256 + 256 * 64 + 64 + 64 * 2 + 2;
        assert_eq!(expected, 541_634);
        assert_eq!(m.parameter_count(), expected);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(init_model(0, &DEFAULT_HIDDEN, 1).is_err());
        assert!(init_model(4, &[3, 3], 1).is_err());
        assert!(init_model(4, &[3, 0, 3], 1).is_err());
    }

    #[test]
    fn zero_model_gives_even_odds() {
        let m = MlpModel::zeros(5, &[4, 3, 2]).unwrap();
        let logits = m.forward(array![[1.0, -2.0, 3.0, 0.5, 9.0]].view()).unwrap();
        assert_eq!(logits, array![[0.0, 0.0]]);
        assert_eq!(predict_proba(&m, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 0.5);
        assert_eq!(predict_label(0.5), 1);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let m = MlpModel::zeros(3, &[2, 2, 2]).unwrap();
        assert!(m.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn positive_homogeneity_of_relu_path() {
        let mut m = MlpModel::zeros(1, &[1, 1, 1]).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
            l.weights[[0, 0]] = 1.5;
        }
        let y1 = m.forward(array![[2.0]].view()).unwrap()[[0, 0]];
        let y3 = m.forward(array![[6.0]].view()).unwrap()[[0, 0]];
        assert!((y3 - 3.0 * y1).abs() < 1e-12);
        assert!(y1 > 0.0);
    }

    #[test]
    fn identical_rows_identical_logits() {
        let m = init_model(4, &[8, 6, 4], 3).unwrap();
        let out = m
            .forward(array![[0.1, 0.2, -0.3, 0.4], [0.1, 0.2, -0.3, 0.4]].view())
            .unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn uniform_logits_loss_is_ln2() {
        let (loss, _) = weighted_ce_loss(array![[0.0, 0.0]].view(), &[1], [1.0, 1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        assert!(weighted_ce_loss(array![[f64::NAN, 0.0]].view(), &[1], [1.0, 1.0]).is_err());
        assert!(weighted_ce_loss(array![[0.0, 0.0]].view(), &[2], [1.0, 1.0]).is_err());
        assert!(weighted_ce_loss(array![[0.0, 0.0]].view(), &[1], [0.0, 1.0]).is_err());
    }

    #[test]
    fn inverse_frequency_on_cohort_counts() {
        let w = inverse_frequency_weights(&[374, 114]).unwrap();
        assert!((w[0] - 0.6524).abs() < 1e-4);
        assert!((w[1] - 2.1404).abs() < 1e-4);
        assert!(inverse_frequency_weights(&[10, 0]).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1]];
        let labels = [1, 0, 1];
        let w = [0.6, 2.1];
        let (_, g) = weighted_ce_loss(logits.view(), &labels, w).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..2 {
                let mut p = logits.clone();
                p[[i, c]] += h;
                let mut n = logits.clone();
                n[[i, c]] -= h;
                let fd = (weighted_ce_loss(p.view(), &labels, w).unwrap().0
                    - weighted_ce_loss(n.view(), &labels, w).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[[i, c]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn adam_fixed_point_and_first_step() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = [0.7];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut p, &[0.0], &mut m, &mut v, 1, &cfg);
        assert_eq!(p, [0.7]);

        for g in [0.5, -3.0, 1e-3] {
            let mut p = [1.0];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, 1, &cfg);
            let delta = p[0] - 1.0;
            assert_eq!(delta.signum(), -g.signum());
            assert!(delta.abs() <= cfg.learning_rate);
            assert!(delta.abs() >= 0.999 * cfg.learning_rate);
        }
    }

    #[test]
    fn adam_weight_decay_shrinks_param() {
        for decoupled in [false, true] {
            let cfg = AdamConfig {
                weight_decay: 1e-5,
                decoupled,
                ..AdamConfig::default()
            };
            let mut p = [1.0];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[0.0], &mut m, &mut v, 1, &cfg);
            assert!(p[0] < 1.0);
        }
    }

    #[test]
    fn probabilities_from_logits() {
        let p = softmax_row(2.0, 2.0 + 3f64.ln());
        assert!((p[1] - 0.75).abs() < 1e-12);
        let m = init_model(6, &[5, 4, 3], 9).unwrap();
        let x = array![[0.3, -0.2, 1.0, 2.0, -1.5, 0.0]];
        let logits = m.forward(x.view()).unwrap();
        let s = softmax_row(logits[[0, 0]], logits[[0, 1]]);
        assert!((s[0] + s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn train_rejects_single_class_and_zero_epochs() {
        let m = init_model(2, &[4, 4, 4], 1).unwrap();
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(train(m.clone(), x.view(), &[1, 1], &TrainConfig::default()).is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(m, x.view(), &[0, 1], &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.9], [0.9, 0.2], [0.1, 0.8]];
        let y = [1, 0, 1, 0, 1];
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            seed: 7,
            hidden_dims: vec![8, 8, 4],
            ..TrainConfig::default()
        };
        let m = init_model(2, &cfg.hidden_dims, 7).unwrap();
        let a = train(m.clone(), x.view(), &y, &cfg).unwrap();
        let b = train(m, x.view(), &y, &cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve.len(), 5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = init_model(6, &[5, 4, 3], 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::from_model(&m, None).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().to_model().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn class_weights_config_forms() {
        let cfg: TrainConfig = toml::from_str("class_weights = \"auto\"").unwrap();
        assert_eq!(cfg.class_weights, ClassWeights::default());
        let cfg: TrainConfig = toml::from_str("class_weights = [1.0, 3.0]").unwrap();
        assert_eq!(cfg.class_weights, ClassWeights::Explicit([1.0, 3.0]));
        assert_eq!(cfg.resolve_class_weights(&[1]).unwrap(), [1.0, 3.0]);
    }
}
