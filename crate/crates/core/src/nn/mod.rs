//! Minimal neural-network engine for 1D time-series classifiers.
//!
//! Layers run a forward pass that records a cache and a backward pass that
//! consumes it (layer-granular reverse-mode differentiation). Gradients are
//! produced in the same [`ParamSet`] layout as the parameters.

mod arch;
mod gemm;
pub mod gradcheck;
mod layers;
mod lstm;
pub mod train;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamSet, Tensor, TensorError};

pub use arch::Architecture;
pub use gemm::gemm;
pub use gradcheck::{finite_difference_check, GradCheck};
pub use layers::{conv_out_len, im2col, pool_out_len, Layer};
pub use lstm::LstmParams;
pub use train::{evaluate, train, train_with, EpochRecord, GradientStep, PlainGradient, TrainConfig, TrainOutcome};

/// Deterministic, portable generator used for initialization, shuffling,
/// dropout and DP noise.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("no legal layer stack for {architecture:?} with {channels} channel(s) of length {length}")]
    UnsupportedShape { architecture: Architecture, channels: usize, length: usize },
    #[error("expected batch shape (B, {channels}, {length}), got {got:?}")]
    ShapeMismatch { channels: usize, length: usize, got: Vec<usize> },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("{labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_channels: usize,
    pub input_length: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, input_channels: usize, input_length: usize, num_classes: usize) -> Self {
        Self { architecture, input_channels, input_length, num_classes }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_channels == 0 || self.input_length == 0 {
            return Err(NnError::InvalidSpec("input channels and length must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(NnError::InvalidSpec(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub seed: u64,
    layers: Vec<Layer>,
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model, NnError> {
    spec.validate()?;
    let (layers, params) = arch::build(spec, seed)?;
    Ok(Model { spec: *spec, params, seed, layers })
}

impl Model {
    /// Assembles a model from an explicit layer stack. Shapes are checked
    /// statically against `spec` and the parameter tensors.
    pub fn from_layers(spec: ModelSpec, layers: Vec<Layer>, params: ParamSet, seed: u64) -> Result<Model, NnError> {
        spec.validate()?;
        let bad = |i: usize, what: &str| Err(NnError::InvalidSpec(format!("layer {i}: {what}")));
        let param_shape = |idx: usize| (idx < params.len()).then(|| params.get(idx).shape().to_vec());
        // (channels, length) while sequential, (features, 0) once flat
        let (mut width, mut len, mut flat) = (spec.input_channels, spec.input_length, false);
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Conv1d { weight, bias, in_channels, out_channels, kernel, stride, padding } => {
                    if flat || in_channels != width {
                        return bad(i, "conv input mismatch");
                    }
                    if param_shape(weight) != Some(vec![out_channels, in_channels, kernel])
                        || param_shape(bias) != Some(vec![out_channels])
                    {
                        return bad(i, "conv parameter shape");
                    }
                    let Some(l) = conv_out_len(len, kernel, stride.max(1), padding).filter(|_| stride > 0) else {
                        return bad(i, "conv output would be empty");
                    };
                    (width, len) = (out_channels, l);
                }
                Layer::MaxPool1d { size, stride } => {
                    let Some(l) = (!flat && stride > 0 && size > 0).then(|| pool_out_len(len, size, stride)).flatten()
                    else {
                        return bad(i, "pool output would be empty");
                    };
                    len = l;
                }
                Layer::Relu => {}
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return bad(i, "dropout rate outside [0, 1)");
                    }
                }
                Layer::Flatten => {
                    if !flat {
                        (width, len, flat) = (width * len, 0, true);
                    }
                }
                Layer::GlobalAvgPool => {
                    if flat {
                        return bad(i, "global pooling needs a sequence");
                    }
                    (len, flat) = (0, true);
                }
                Layer::Dense { weight, bias, in_features, out_features } => {
                    if !flat || in_features != width {
                        return bad(i, "dense input mismatch");
                    }
                    if param_shape(weight) != Some(vec![out_features, in_features])
                        || param_shape(bias) != Some(vec![out_features])
                    {
                        return bad(i, "dense parameter shape");
                    }
                    width = out_features;
                }
                Layer::BiLstm { forward, backward, input_size, hidden, return_sequences } => {
                    if flat || input_size != width {
                        return bad(i, "lstm input mismatch");
                    }
                    for p in [forward, backward] {
                        if param_shape(p.w_ih) != Some(vec![4 * hidden, input_size])
                            || param_shape(p.w_hh) != Some(vec![4 * hidden, hidden])
                            || param_shape(p.bias) != Some(vec![4 * hidden])
                        {
                            return bad(i, "lstm parameter shape");
                        }
                    }
                    width = 2 * hidden;
                    if !return_sequences {
                        (len, flat) = (0, true);
                    }
                }
            }
        }
        if !flat || width != spec.num_classes {
            return Err(NnError::InvalidSpec(format!("stack does not end in {} logits", spec.num_classes)));
        }
        Ok(Model { spec, params, seed, layers })
    }
}

/// Softmax cross-entropy pieces for one batch of logits.
struct SoftmaxXent {
    loss_sum: f64,
    /// `softmax - one_hot`, unscaled: the gradient of the summed loss.
    dlogits: Tensor,
}

fn softmax_xent(logits: &Tensor, labels: &[usize]) -> SoftmaxXent {
    let classes = logits.shape()[1];
    let mut d = logits.clone();
    let mut loss_sum = 0.0;
    for (row, &y) in d.data_mut().chunks_mut(classes).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        loss_sum += lse - row[y];
        for z in row.iter_mut() {
            *z = (*z - lse).exp();
        }
        row[y] -= 1.0;
    }
    SoftmaxXent { loss_sum, dlogits: d }
}

/// Row-wise softmax of a `(B, C)` logit tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let classes = logits.shape()[1];
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for z in row.iter_mut() {
            *z = (*z - m).exp();
            s += *z;
        }
        row.iter_mut().for_each(|z| *z /= s);
    }
    p
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let cols = t.shape()[1];
    t.data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Output of one forward/backward pass where the gradient is that of the
/// *summed* (not averaged) loss over the batch.
pub(crate) struct GradSum {
    pub loss_sum: f64,
    pub grads: ParamSet,
    pub logits: Tensor,
}

const EVAL_CHUNK: usize = 256;

impl Model {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), NnError> {
        let s = batch.shape();
        if s.len() != 3 || s[1] != self.spec.input_channels || s[2] != self.spec.input_length {
            return Err(NnError::ShapeMismatch {
                channels: self.spec.input_channels,
                length: self.spec.input_length,
                got: s.to_vec(),
            });
        }
        batch.check_finite()?;
        Ok(())
    }

    fn check_labels(&self, batch: &Tensor, labels: &[usize]) -> Result<(), NnError> {
        if labels.len() != batch.shape()[0] {
            return Err(NnError::LabelCount { labels: labels.len(), batch: batch.shape()[0] });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.spec.num_classes) {
            return Err(NnError::LabelOutOfRange { label, num_classes: self.spec.num_classes });
        }
        Ok(())
    }

    fn run_forward(&self, batch: Tensor, mut rng: Option<&mut Rng>) -> (Tensor, Vec<layers::Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch;
        for layer in &self.layers {
            let (y, cache) = layer.forward(&self.params, x, rng.as_deref_mut());
            caches.push(cache);
            x = y;
        }
        (x, caches)
    }

    /// Inference-mode logits, `(B, num_classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        self.check_batch(batch)?;
        let n = batch.shape()[0];
        let classes = self.spec.num_classes;
        let mut out = Vec::with_capacity(n * classes);
        let mut start = 0;
        while start < n {
            let count = EVAL_CHUNK.min(n - start);
            let (logits, _) = self.run_forward(batch.slice_outer(start, count), None);
            out.extend_from_slice(logits.data());
            start += count;
        }
        let logits = Tensor::new(vec![n, classes], out)?;
        logits.check_finite()?;
        Ok(logits)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>, NnError> {
        Ok(argmax_rows(&self.forward(batch)?))
    }

    /// Summed-loss gradient over the batch. `rng` switches on training mode
    /// (dropout).
    pub(crate) fn grad_sum(&self, batch: &Tensor, labels: &[usize], rng: Option<&mut Rng>) -> Result<GradSum, NnError> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let (logits, caches) = self.run_forward(batch.clone(), rng);
        logits.check_finite()?;
        let SoftmaxXent { loss_sum, dlogits } = softmax_xent(&logits, labels);
        let mut grads = self.params.zeros_like();
        let mut dy = dlogits;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            match layer.backward(&self.params, cache, dy, &mut grads, i > 0) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
        Ok(GradSum { loss_sum, grads, logits })
    }
}

/// Inference-mode forward pass.
pub fn forward(model: &Model, batch: &Tensor) -> Result<Tensor, NnError> {
    model.forward(batch)
}

/// Mean softmax cross-entropy over the batch and its gradient (inference
/// mode, so dropout is inactive and the result is deterministic).
pub fn loss_and_grads(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<(f64, ParamSet), NnError> {
    let GradSum { loss_sum, mut grads, .. } = model.grad_sum(batch, labels, None)?;
    let n = labels.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss_sum / n, grads))
}

/// Training-mode variant of [`loss_and_grads`]: dropout masks are drawn
/// from `rng`, so equal generator states give equal masks.
pub fn loss_and_grads_train(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<(f64, ParamSet), NnError> {
    let GradSum { loss_sum, mut grads, .. } = model.grad_sum(batch, labels, Some(rng))?;
    let n = labels.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss_sum / n, grads))
}

/// Gradient of each example's own loss, computed on singleton batches.
pub fn per_example_grads(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<Vec<ParamSet>, NnError> {
    per_example_grads_with(model, batch, labels, None).map(|(g, _, _)| g)
}

/// Per-example gradients plus the summed loss and the per-example logits.
/// With `rng` set, dropout masks are drawn example by example.
pub fn per_example_grads_with(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    mut rng: Option<&mut Rng>,
) -> Result<(Vec<ParamSet>, f64, Vec<usize>), NnError> {
    model.check_batch(batch)?;
    model.check_labels(batch, labels)?;
    let mut out = Vec::with_capacity(labels.len());
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let single = batch.slice_outer(i, 1);
        let gs = model.grad_sum(&single, &[y], rng.as_deref_mut())?;
        loss_sum += gs.loss_sum;
        preds.push(argmax_rows(&gs.logits)[0]);
        out.push(gs.grads);
    }
    Ok((out, loss_sum, preds))
}
