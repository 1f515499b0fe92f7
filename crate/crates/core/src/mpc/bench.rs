use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::inference::{encrypted_forward, share_model, ModelLayout};
use super::train_step::encrypted_train_step;
use super::{run_protocol, MpcConfig, MpcError};
use crate::nn::{loss_and_grads_train, rng_from_seed, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Inference,
    TrainStep,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Workload::Inference => "inference",
            Workload::TrainStep => "train_step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub mode: &'static str,
    pub phase: &'static str,
    pub avg_s: f64,
    pub std_s: f64,
    pub batch: usize,
    pub repeats: usize,
}

fn summarize(mode: &'static str, workload: Workload, batch: usize, times: &[f64]) -> RuntimeStats {
    let n = times.len() as f64;
    let avg = times.iter().sum::<f64>() / n;
    let var = if times.len() > 1 { times.iter().map(|t| (t - avg).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    RuntimeStats { mode, phase: workload.name(), avg_s: avg, std_s: var.sqrt(), batch, repeats: times.len() }
}

/// Times `repeats` executions of `workload` on `batch`, on shares and in
/// the clear; returns `[encrypted, plaintext]`.
///
/// Encrypted timings are taken at the data owner after the model has been
/// shared, and include sharing the batch and opening the result.
pub fn benchmark_runtime(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    workload: Workload,
    repeats: usize,
    config: &MpcConfig,
) -> Result<[RuntimeStats; 2], MpcError> {
    let repeats = repeats.max(1);
    let layout = ModelLayout::of(model);
    layout.check_supported()?;
    let spec = model.spec;
    let b = batch.shape()[0];
    let owner = config.data_owner();
    let lr = 0.01;
    let onehot: Vec<f64> =
        labels.iter().flat_map(|&l| (0..spec.num_classes).map(move |k| if k == l { 1.0 } else { 0.0 })).collect();

    let run = run_protocol(config, |party| {
        let me = party.id();
        let mut shared = share_model(party, 0, &layout, (me == 0).then_some(model))?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            let x = party.input_reals(owner, (me == owner).then_some(batch.data()), batch.len())?;
            match workload {
                Workload::Inference => {
                    let logits = encrypted_forward(party, &shared, x, b)?;
                    party.reveal_to(owner, &logits)?;
                }
                Workload::TrainStep => {
                    let y = party.input_reals(owner, (me == owner).then_some(&onehot[..]), onehot.len())?;
                    encrypted_train_step(party, &mut shared, x, &y, b, lr)?;
                }
            }
            times.push(start.elapsed().as_secs_f64());
        }
        Ok(times)
    })?;
    let encrypted = summarize("encrypted", workload, b, &run.outputs[owner]);

    let mut plain_model = model.clone();
    let mut rng = rng_from_seed(config.party_seed);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        match workload {
            Workload::Inference => {
                std::hint::black_box(plain_model.forward(batch)?);
            }
            Workload::TrainStep => {
                let (_, grads) = loss_and_grads_train(&plain_model, batch, labels, &mut rng)?;
                plain_model.params.axpy(-lr, &grads);
            }
        }
        times.push(start.elapsed().as_secs_f64());
    }
    let plaintext = summarize("plaintext", workload, b, &times);
    Ok([encrypted, plaintext])
}
