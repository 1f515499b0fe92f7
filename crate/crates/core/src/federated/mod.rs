//! Simulated federated learning over client silos: FedAVG, independent
//! federated ensembles, and ensembles of DP-SGD clients.

mod client;
mod ensemble;

use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SiloPartition, TimeSeriesDataset};
use crate::dp::{dp_train, DpConfig, DpError, PrivacySpent};
use crate::nn::train::{train_loop, EpochStats, PlainGradient};
use crate::nn::{build_model, train, Model, ModelSpec, NnError, Rng, TrainConfig, TrainOutcome};
use crate::tensor::ParamSet;

pub use client::{current_client, ClientData, ClientState};
pub use ensemble::{ensemble_predict, EnsembleScheme, PROB_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederatedError {
    #[error("parameter sets do not share a layout")]
    ShapeMismatch,
    #[error("models disagree on class count: {0:?}")]
    ClassCountMismatch(Vec<usize>),
    #[error("invalid federated configuration: {0}")]
    InvalidConfig(String),
    #[error("no client holds any samples")]
    NoData,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederatedConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    /// Local passes per round; 0 means a single minibatch (FedSGD).
    pub local_epochs: usize,
    pub stratified: bool,
    /// Drives silo partitioning and client sampling.
    pub seed: u64,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self { num_clients: 2, clients_per_round: 2, rounds: 100, local_epochs: 1, stratified: true, seed: 0 }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        if self.num_clients == 0 {
            return Err(FederatedError::InvalidConfig("num_clients must be at least 1".into()));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(FederatedError::InvalidConfig(format!(
                "clients_per_round {} must be in 1..={}",
                self.clients_per_round, self.num_clients
            )));
        }
        if self.rounds == 0 {
            return Err(FederatedError::InvalidConfig("rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed of client `i` derived from a run seed; client 0 keeps the run seed.
pub fn client_seed(seed: u64, client: usize) -> u64 {
    seed.wrapping_add((client as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Sample-count weighted mean of parameter sets, accumulated in input order.
pub fn aggregate_weights(params: &[&ParamSet], counts: &[usize]) -> Result<ParamSet, FederatedError> {
    let (first, rest) = params.split_first().ok_or(FederatedError::NoData)?;
    if params.len() != counts.len() {
        return Err(FederatedError::InvalidConfig(format!("{} parameter sets, {} counts", params.len(), counts.len())));
    }
    if counts.contains(&0) {
        return Err(FederatedError::InvalidConfig("sample counts must be positive".into()));
    }
    if rest.iter().any(|p| !p.same_layout(first)) {
        return Err(FederatedError::ShapeMismatch);
    }
    let total: usize = counts.iter().sum();
    let weight = |i: usize| counts[i] as f64 / total as f64;
    let mut out = (*first).clone();
    out.scale(weight(0));
    for (i, p) in rest.iter().enumerate() {
        out.axpy(weight(i + 1), p);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FedAvgOutcome {
    pub outcome: TrainOutcome,
    /// Clients that took part in each round, ascending.
    pub participants: Vec<Vec<usize>>,
}

/// FedAVG over prepared clients. The global model starts from `model`,
/// each round trains the sampled clients from the current global weights,
/// and the server replaces the global weights by their count-weighted mean.
/// Early stopping and learning-rate halving follow `train_cfg` evaluated on
/// the server's validation set; `fed.rounds` replaces `train_cfg.epochs`.
pub fn run_fedavg_clients<D: ClientData>(
    model: Model,
    clients: &mut [ClientState<D>],
    val: &TimeSeriesDataset,
    train_cfg: &TrainConfig,
    fed: &FederatedConfig,
) -> Result<FedAvgOutcome, FederatedError> {
    fed.validate()?;
    if clients.len() != fed.num_clients {
        return Err(FederatedError::InvalidConfig(format!(
            "{} clients for num_clients {}",
            clients.len(),
            fed.num_clients
        )));
    }
    if clients.iter().all(|c| c.num_samples() == 0) {
        return Err(FederatedError::NoData);
    }
    let mut sampler = Rng::seed_from_u64(fed.seed);
    sampler.set_stream(0x636c69656e7473);
    let cfg = TrainConfig { epochs: fed.rounds, ..*train_cfg };
    let mut participants = Vec::new();
    let mut failure: Option<FederatedError> = None;

    let outcome = train_loop(model, val, &cfg, |global, lr, round| {
        let mut chosen = if fed.clients_per_round == fed.num_clients {
            (0..fed.num_clients).collect()
        } else {
            sample(&mut sampler, fed.num_clients, fed.clients_per_round).into_vec()
        };
        chosen.sort_unstable();
        let mut stats = EpochStats::default();
        let mut updates = Vec::with_capacity(chosen.len());
        for &c in &chosen {
            let client = &mut clients[c];
            if client.num_samples() == 0 {
                log::warn!("round {round}: client {c} has no samples and is skipped");
                continue;
            }
            client.receive(&global.params);
            stats.merge(client.local_train(fed.local_epochs, cfg.batch_size, lr, &mut PlainGradient)?);
            updates.push((client.params().clone(), client.num_samples()));
        }
        let refs: Vec<&ParamSet> = updates.iter().map(|(p, _)| p).collect();
        let counts: Vec<usize> = updates.iter().map(|(_, n)| *n).collect();
        match aggregate_weights(&refs, &counts) {
            Ok(p) => global.params = p,
            Err(e) => {
                failure = Some(e);
                return Err(NnError::InvalidConfig("aggregation failed".into()));
            }
        }
        participants.push(chosen);
        Ok(stats)
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(FedAvgOutcome { outcome: outcome?, participants })
}

/// FedAVG from a fresh model on a silo partition. Client `i` trains with
/// seed `client_seed(train_cfg.seed, i)`.
pub fn run_fedavg(
    spec: &ModelSpec,
    model_seed: u64,
    partition: &SiloPartition,
    val: &TimeSeriesDataset,
    train_cfg: &TrainConfig,
    fed: &FederatedConfig,
) -> Result<FedAvgOutcome, FederatedError> {
    let model = build_model(spec, model_seed)?;
    let mut clients: Vec<ClientState<TimeSeriesDataset>> = partition
        .silos
        .iter()
        .enumerate()
        .map(|(i, silo)| ClientState::new(i, silo.clone(), model.clone(), client_seed(train_cfg.seed, i)))
        .collect();
    run_fedavg_clients(model, &mut clients, val, train_cfg, fed)
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub client_id: usize,
    pub num_samples: usize,
    pub outcome: TrainOutcome,
    pub privacy: Option<PrivacySpent>,
}

/// Independent models, one per client silo, validated on the server's
/// validation set. With `dp` set every client runs DP-SGD.
pub fn train_ensemble_clients<D: ClientData>(
    clients: &[ClientState<D>],
    val: &TimeSeriesDataset,
    train_cfg: &TrainConfig,
    dp: Option<&DpConfig>,
) -> Result<Vec<EnsembleMember>, FederatedError> {
    let mut members = Vec::with_capacity(clients.len());
    for client in clients {
        if client.num_samples() == 0 {
            log::warn!("client {} has no samples and is left out of the ensemble", client.client_id());
            continue;
        }
        let cfg = TrainConfig { seed: client_seed(train_cfg.seed, client.client_id()), ..*train_cfg };
        let (outcome, privacy) = client.train_independent(|model, silo| match dp {
            Some(dp) => {
                dp_train(model, silo, val, &cfg, dp).map(|o| (o.outcome, Some(o.privacy))).map_err(FederatedError::from)
            }
            None => train(model, silo, val, &cfg).map(|o| (o, None)).map_err(FederatedError::from),
        })?;
        members.push(EnsembleMember {
            client_id: client.client_id(),
            num_samples: client.num_samples(),
            outcome,
            privacy,
        });
    }
    if members.is_empty() {
        return Err(FederatedError::NoData);
    }
    Ok(members)
}

/// Ensemble over a silo partition. Client `i` initializes its model with
/// `client_seed(model_seed, i)` and trains with `client_seed(train_cfg.seed, i)`.
pub fn train_ensemble(
    spec: &ModelSpec,
    model_seed: u64,
    partition: &SiloPartition,
    val: &TimeSeriesDataset,
    train_cfg: &TrainConfig,
    dp: Option<&DpConfig>,
) -> Result<Vec<EnsembleMember>, FederatedError> {
    let clients = partition
        .silos
        .iter()
        .enumerate()
        .map(|(i, silo)| Ok(ClientState::new(i, silo.clone(), build_model(spec, client_seed(model_seed, i))?, 0)))
        .collect::<Result<Vec<_>, FederatedError>>()?;
    train_ensemble_clients(&clients, val, train_cfg, dp)
}

/// Weighted-softmax weights proportional to silo sizes.
pub fn size_weights(members: &[EnsembleMember]) -> Vec<f64> {
    let total: usize = members.iter().map(|m| m.num_samples).sum();
    members.iter().map(|m| m.num_samples as f64 / total as f64).collect()
}

/// Class frequencies pooled over all members' training silos.
pub fn pooled_priors(partition: &SiloPartition) -> Vec<f64> {
    let classes = partition.silos.first().map_or(0, |s| s.num_classes());
    let mut counts = vec![0usize; classes];
    for silo in &partition.silos {
        for (c, n) in silo.class_counts().into_iter().enumerate() {
            counts[c] += n;
        }
    }
    let total = counts.iter().sum::<usize>().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn weighted_mean() {
        let (a, b) = (scalar_set(1.0), scalar_set(3.0));
        let out = aggregate_weights(&[&a, &b], &[1, 3]).unwrap();
        assert_eq!(out.flatten(), vec![2.5]);
        let out = aggregate_weights(&[&a, &b], &[5, 5]).unwrap();
        assert_eq!(out.flatten(), vec![2.0]);
    }

    #[test]
    fn single_set_is_returned_exactly() {
        let a = scalar_set(-0.0);
        let out = aggregate_weights(&[&a], &[7]).unwrap();
        assert_eq!(out.flatten()[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn layout_mismatch() {
        let a = scalar_set(1.0);
        let mut b = ParamSet::new();
        b.push("w", Tensor::zeros(&[2]));
        assert_eq!(aggregate_weights(&[&a, &b], &[1, 1]).unwrap_err(), FederatedError::ShapeMismatch);
    }

    #[test]
    fn client_zero_keeps_seed() {
        assert_eq!(client_seed(42, 0), 42);
        assert_ne!(client_seed(42, 1), client_seed(43, 0));
    }
}
