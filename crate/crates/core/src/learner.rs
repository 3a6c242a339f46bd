//! Feed-forward rectifier network with a softmax output, trained by
//! mini-batch SGD on mean cross-entropy.
//!
//! Parameters live in one flat vector so they can be averaged, stored and
//! compared without caring about layer structure. For every pair of adjacent
//! layers the vector holds an `in x out` row-major weight block followed by
//! `out` biases.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter vectors belong to different model specs")]
    SpecMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, LearnerError> {
        if layer_sizes.len() < 2 {
            return Err(LearnerError::InvalidSpec(format!(
                "need at least an input and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(LearnerError::InvalidSpec(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(ModelSpec { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(offset, fan_in, fan_out)` of each weight block.
    fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layer_sizes.windows(2).scan(0usize, |offset, w| {
            let start = *offset;
            *offset += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }
}

impl TryFrom<Vec<usize>> for ModelSpec {
    type Error = LearnerError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        ModelSpec::new(v)
    }
}

impl From<ModelSpec> for Vec<usize> {
    fn from(spec: ModelSpec) -> Self {
        spec.layer_sizes
    }
}

/// Flat model parameters tied to the spec they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    spec: ModelSpec,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: ModelSpec, values: Vec<f64>) -> Result<Self, LearnerError> {
        if values.len() != spec.param_count() {
            return Err(LearnerError::DimensionMismatch { expected: spec.param_count(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("parameters"));
        }
        Ok(ParamVector { spec, values })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector { values: vec![0.0; spec.param_count()], spec: spec.clone() }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.spec == other.spec
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        self.spec
            .blocks()
            .map(|(off, fan_in, fan_out)| {
                let w = ArrayView2::from_shape((fan_in, fan_out), &self.values[off..off + fan_in * fan_out])
                    .expect("block shape matches spec");
                let b = ArrayView1::from(&self.values[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
                (w, b)
            })
            .collect()
    }
}

/// Labelled samples, one feature row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self, LearnerError> {
        if features.nrows() != labels.len() {
            return Err(LearnerError::DimensionMismatch { expected: features.nrows(), found: labels.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(LearnerError::LabelOutOfRange { label, classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("features"));
        }
        Ok(Dataset { features, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Concatenates rows of `parts` in order.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset, LearnerError> {
        let first = parts.first().ok_or(LearnerError::EmptyDataset)?;
        let views: Vec<_> = parts.iter().map(|d| d.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|_| LearnerError::DimensionMismatch { expected: first.dims(), found: 0 })?;
        let labels = parts.iter().flat_map(|d| d.labels.iter().copied()).collect();
        Dataset::new(features, labels, first.classes)
    }

    fn check_against(&self, spec: &ModelSpec) -> Result<(), LearnerError> {
        if self.is_empty() {
            return Err(LearnerError::EmptyDataset);
        }
        if self.dims() != spec.input_dim() {
            return Err(LearnerError::DimensionMismatch { expected: spec.input_dim(), found: self.dims() });
        }
        if self.classes > spec.classes() {
            return Err(LearnerError::DimensionMismatch { expected: spec.classes(), found: self.classes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { learning_rate: 0.05, batch_size: 10, local_epochs: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Fraction of samples whose most probable class is the label.
    pub accuracy: f64,
}

/// Scaled-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for (off, fan_in, fan_out) in spec.blocks() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[off..off + fan_in * fan_out] {
            *v = rng.random_range(-limit..limit);
        }
    }
    ParamVector { spec: spec.clone(), values }
}

/// Class probabilities for one feature row.
pub fn predict(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>, LearnerError> {
    let spec = params.spec();
    if x.len() != spec.input_dim() {
        return Err(LearnerError::DimensionMismatch { expected: spec.input_dim(), found: x.len() });
    }
    let input = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
    let mut logits = forward(params, input).logits;
    softmax_rows(&mut logits);
    Ok(logits.row(0).to_vec())
}

/// Mean cross-entropy and accuracy over `data`.
pub fn evaluate(params: &ParamVector, data: &Dataset) -> Result<Evaluation, LearnerError> {
    data.check_against(params.spec())?;
    const CHUNK: usize = 1000;
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let n = data.len();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let logits = forward(params, data.features.slice(s![start..end, ..])).logits;
        for (row, &label) in logits.rows().into_iter().zip(&data.labels[start..end]) {
            total_loss += log_sum_exp(row) - row[label];
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok(Evaluation { loss: total_loss / n as f64, accuracy: correct as f64 / n as f64 })
}

/// Gradient of the mean cross-entropy over `batch`.
pub fn gradient(params: &ParamVector, batch: &Dataset) -> Result<ParamVector, LearnerError> {
    batch.check_against(params.spec())?;
    let values = backprop(params, batch.features.view(), &batch.labels);
    Ok(ParamVector { spec: params.spec.clone(), values })
}

/// `local_epochs` passes of mini-batch SGD over `data`. Each epoch visits the
/// samples in an order drawn from one ChaCha8 stream seeded with `h.seed`.
pub fn local_train(params: &ParamVector, data: &Dataset, h: &Hyperparams) -> Result<ParamVector, LearnerError> {
    data.check_against(params.spec())?;
    if h.batch_size == 0 {
        return Err(LearnerError::InvalidHyperparams("batch_size must be positive".into()));
    }
    if !(h.learning_rate >= 0.0 && h.learning_rate.is_finite()) {
        return Err(LearnerError::InvalidHyperparams(format!("learning_rate {} is not >= 0", h.learning_rate)));
    }
    let mut current = params.clone();
    if h.learning_rate == 0.0 {
        return Ok(current);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..h.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(h.batch_size) {
            let x = data.features.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let grad = backprop(&current, x.view(), &y);
            for (p, g) in current.values.iter_mut().zip(&grad) {
                *p -= h.learning_rate * g;
            }
        }
    }
    if current.values.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFinite("trained parameters (diverged)"));
    }
    Ok(current)
}

struct ForwardPass {
    /// Inputs to every layer: the batch itself, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn forward(params: &ParamVector, x: ArrayView2<'_, f64>) -> ForwardPass {
    let layers = params.layers();
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut current = x.to_owned();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = current.dot(w);
        z += b;
        inputs.push(current);
        if l == last {
            return ForwardPass { inputs, logits: z };
        }
        z.mapv_inplace(|v| v.max(0.0));
        current = z;
    }
    unreachable!("spec has at least one weight block")
}

fn backprop(params: &ParamVector, x: ArrayView2<'_, f64>, labels: &[usize]) -> Vec<f64> {
    let ForwardPass { inputs, logits } = forward(params, x);
    let batch = labels.len() as f64;
    let mut delta = logits;
    softmax_rows(&mut delta);
    for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
        row[label] -= 1.0;
    }
    delta /= batch;

    let layers = params.layers();
    let blocks: Vec<_> = params.spec.blocks().collect();
    let mut grad = vec![0.0; params.len()];
    for l in (0..layers.len()).rev() {
        let (off, fan_in, fan_out) = blocks[l];
        let gw = inputs[l].t().dot(&delta);
        let gb: Array1<f64> = delta.sum_axis(Axis(0));
        grad[off..off + fan_in * fan_out].copy_from_slice(gw.as_slice().expect("standard layout"));
        grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].copy_from_slice(gb.as_slice().unwrap());
        if l > 0 {
            let mut next = delta.dot(&layers[l].0.t());
            next.zip_mut_with(&inputs[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = next;
        }
    }
    grad
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
