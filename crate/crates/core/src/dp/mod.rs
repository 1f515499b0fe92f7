//! DP-SGD: per-example clipping, Gaussian noise on the clipped sum, and
//! privacy accounting of the executed steps.

mod accountant;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TimeSeriesDataset;
use crate::nn::train::{train_with, GradientStep, PlainGradient, StepOutput};
use crate::nn::{per_example_grads_with, Model, NnError, Rng, TrainConfig, TrainOutcome};
use crate::tensor::{ParamSet, Tensor};

pub use accountant::{compute_epsilon, epsilon_from, rdp_sgm, steps_for, PrivacySpent, RdpCurve, MAX_ORDER, MIN_ORDER};

pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid DP configuration: {0}")]
    InvalidConfig(String),
    #[error("RDP overflow at q = {q}, sigma = {sigma}, order {order}")]
    NumericalOverflow { q: f64, sigma: f64, order: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Minibatch size and epochs come from the accompanying [`TrainConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// L2 clipping threshold `C`; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl DpConfig {
    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Self {
        Self { clip_norm, noise_multiplier, delta: DEFAULT_DELTA }
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.clip_norm > 0.0) {
            return Err(DpError::InvalidConfig(format!("clip norm {} must be positive", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(DpError::InvalidConfig(format!(
                "noise multiplier {} must be finite and >= 0",
                self.noise_multiplier
            )));
        }
        if self.clip_norm.is_infinite() && self.noise_multiplier > 0.0 {
            return Err(DpError::InvalidConfig("noise needs a finite clip norm".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpError::InvalidConfig(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Scales each example's gradient by `1 / max(1, ||g|| / C)`, using the norm
/// over all of that example's tensors.
pub fn clip_per_example(grads: &mut [ParamSet], clip_norm: f64) {
    for g in grads {
        let factor = (g.l2_norm() / clip_norm).max(1.0);
        if factor > 1.0 {
            g.scale(1.0 / factor);
        }
    }
}

/// `(sum_i g_i + N(0, (n_E C)^2 I)) / b`, summed in input order. One noise
/// tensor is drawn per parameter tensor.
pub fn dp_aggregate(clipped: &[ParamSet], clip_norm: f64, noise_multiplier: f64, b: usize, rng: &mut Rng) -> ParamSet {
    let (first, rest) = clipped.split_first().expect("at least one gradient");
    let mut sum = first.clone();
    for g in rest {
        sum.add_assign(g);
    }
    if noise_multiplier > 0.0 {
        let normal = Normal::new(0.0, noise_multiplier * clip_norm).expect("finite noise scale");
        for t in sum.iter_mut() {
            let noise = Tensor::from_fn(t.tensor.shape(), |_| normal.sample(rng));
            for (v, n) in t.tensor.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }
    sum.scale(1.0 / b as f64);
    sum
}

/// Noise generator for one step: seeded by `seed ^ step` on a stream
/// separate from the shuffling/dropout stream.
pub fn noise_rng(seed: u64, step: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed ^ step);
    rng.set_stream(0x6e6f697365);
    rng
}

/// DP-SGD update rule. With no clipping and no noise it reduces to the
/// plain minibatch gradient, computed by the same code path.
pub struct DpGradient {
    pub config: DpConfig,
    pub seed: u64,
}

impl GradientStep for DpGradient {
    fn compute(
        &mut self,
        model: &Model,
        batch: &Tensor,
        labels: &[usize],
        step: u64,
        rng: &mut Rng,
    ) -> Result<StepOutput, NnError> {
        let DpConfig { clip_norm, noise_multiplier, .. } = self.config;
        if clip_norm.is_infinite() && noise_multiplier == 0.0 {
            return PlainGradient.compute(model, batch, labels, step, rng);
        }
        let (mut grads, loss_sum, preds) = per_example_grads_with(model, batch, labels, Some(rng))?;
        clip_per_example(&mut grads, clip_norm);
        let grads = dp_aggregate(&grads, clip_norm, noise_multiplier, labels.len(), &mut noise_rng(self.seed, step));
        Ok(StepOutput { grads, loss_sum, preds })
    }
}

#[derive(Debug, Clone)]
pub struct DpOutcome {
    pub outcome: TrainOutcome,
    /// Spent over the steps actually executed. ε is infinite without noise.
    pub privacy: PrivacySpent,
}

/// Privacy spent by `steps` DP-SGD steps with sampling rate `b / n`.
pub fn privacy_for_steps(n: usize, b: usize, steps: u64, dp: &DpConfig) -> Result<PrivacySpent, DpError> {
    if dp.noise_multiplier == 0.0 {
        return Ok(PrivacySpent { epsilon: f64::INFINITY, delta: dp.delta, optimal_order: f64::from(MIN_ORDER) });
    }
    let q = (b as f64 / n as f64).min(1.0);
    epsilon_from(q, dp.noise_multiplier, steps, dp.delta)
}

pub fn dp_train(
    model: Model,
    train: &TimeSeriesDataset,
    val: &TimeSeriesDataset,
    config: &TrainConfig,
    dp: &DpConfig,
) -> Result<DpOutcome, DpError> {
    dp.validate()?;
    if dp.delta >= 1.0 / train.len().max(1) as f64 {
        log::warn!("delta {} is not below 1/n for n = {}", dp.delta, train.len());
    }
    let mut grad = DpGradient { config: *dp, seed: config.seed };
    let outcome = train_with(model, train, val, config, &mut grad)?;
    let privacy = privacy_for_steps(train.len(), config.batch_size, outcome.steps, dp)?;
    Ok(DpOutcome { outcome, privacy })
}
