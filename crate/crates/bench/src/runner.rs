//! Experiment execution.
//!
//! Every run derives all randomness from its seed: the validation split,
//! model initialization, shuffling, dropout, DP noise, silo partitioning
//! and MPC randomness. A failing run becomes a `FAILED` row and the sweep
//! continues.

use std::path::Path;
use std::time::Instant;

use tsppml_core::data::{load_ucr_pair, partition_silos, split_train_val, znormalize, SplitTag, TimeSeriesDataset};
use tsppml_core::dp::{compute_epsilon, dp_train, DpConfig};
use tsppml_core::federated::{
    ensemble_predict, pooled_priors, run_fedavg, size_weights, train_ensemble, EnsembleMember, EnsembleScheme,
    FederatedConfig,
};
use tsppml_core::metrics::{accuracy, majority_class_f1, weighted_f1};
use tsppml_core::mpc::{benchmark_runtime, encrypted_inference, MpcConfig, Workload};
use tsppml_core::nn::{build_model, train, Architecture, Model, ModelSpec, TrainOutcome};

use crate::config::{DatasetRef, EpsStudy, ExperimentConfig, ExperimentKind, FedMethod};
use crate::report::{EncRow, EnsembleRow, EpsRow, MetricsReport, RunRow, RunStatus, RuntimeRow};
use crate::BenchError;

/// Normalized train/validation/test sets of one dataset for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub train: TimeSeriesDataset,
    pub val: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

impl Prepared {
    pub fn spec(&self, architecture: Architecture) -> ModelSpec {
        ModelSpec::new(architecture, self.train.channels, self.train.length, self.train.num_classes())
    }
}

fn head(ds: TimeSeriesDataset, max: Option<usize>) -> TimeSeriesDataset {
    match max {
        Some(m) if m < ds.len() => {
            let idx: Vec<usize> = (0..m).collect();
            ds.subset(&idx, ds.split)
        }
        _ => ds,
    }
}

pub fn load_raw(data_dir: &Path, ds: &DatasetRef) -> Result<(TimeSeriesDataset, TimeSeriesDataset), String> {
    let (train, test) = match (&ds.train, &ds.test) {
        (Some(tr), Some(te)) => (
            TimeSeriesDataset::load(tr, SplitTag::Train).map_err(|e| e.to_string())?,
            TimeSeriesDataset::load(te, SplitTag::Test).map_err(|e| e.to_string())?,
        ),
        (None, None) => load_ucr_pair(data_dir, &ds.name).map_err(|e| e.to_string())?,
        _ => return Err(format!("dataset '{}' needs both train and test paths", ds.name)),
    };
    Ok((head(train, ds.max_train), head(test, ds.max_test)))
}

/// Splits off the validation set with `seed` and z-normalizes all three
/// sets with statistics of the remaining training part.
pub fn prepare(
    name: &str,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    validation_fraction: f64,
    seed: u64,
) -> Result<Prepared, String> {
    let (tr, va) = split_train_val(train, validation_fraction, seed).map_err(|e| e.to_string())?;
    let (tr, rest) = znormalize(&tr, &[&va, test]).map_err(|e| e.to_string())?;
    let [val, test]: [TimeSeriesDataset; 2] = rest.try_into().expect("two normalized sets");
    Ok(Prepared { name: name.into(), train: tr, val, test })
}

fn test_f1(model: &Model, test: &TimeSeriesDataset) -> Result<f64, String> {
    let pred = model.predict(&test.samples()).map_err(|e| e.to_string())?;
    weighted_f1(&test.labels, &pred, test.num_classes()).map_err(|e| e.to_string())
}

/// A run counts as non-converged when its best validation F1 is within one
/// point of always predicting the majority class.
fn non_converged(outcome: &TrainOutcome, val: &TimeSeriesDataset) -> bool {
    let floor = majority_class_f1(&val.labels, val.num_classes()).unwrap_or(0.0);
    outcome.best_record().val_f1 <= floor + 0.01
}

struct RunResult {
    f1: f64,
    epsilon: Option<f64>,
    epochs: usize,
    non_converged: bool,
}

fn row(data: &str, method: &str, params: &str, seed: u64, start: Instant, res: Result<RunResult, String>) -> RunRow {
    let wall_s = start.elapsed().as_secs_f64();
    match res {
        Ok(r) => RunRow {
            dataset: data.into(),
            method: method.into(),
            params: params.into(),
            seed,
            status: RunStatus::Ok,
            weighted_f1: Some(r.f1),
            epsilon: r.epsilon,
            epochs: r.epochs,
            non_converged: r.non_converged,
            wall_s,
        },
        Err(e) => {
            log::error!("{data} {method} {params} seed {seed}: {e}");
            RunRow::failed(data, method, params, seed, e, wall_s)
        }
    }
}

fn fed_config(cfg: &ExperimentConfig, clients: usize, seed: u64) -> FederatedConfig {
    let base = cfg.federated.unwrap_or_default();
    FederatedConfig { num_clients: clients, clients_per_round: base.clients_per_round.min(clients), seed, ..base }
}

/// Tracks seed sweeps that may stop once a target F1 has been reached.
struct Sweep {
    target: Option<f64>,
    best: f64,
}

impl Sweep {
    fn new(target: Option<f64>) -> Self {
        Self { target, best: f64::NEG_INFINITY }
    }

    fn record(&mut self, row: &RunRow) {
        if let Some(f1) = row.weighted_f1 {
            self.best = self.best.max(f1);
        }
    }

    fn done(&self) -> bool {
        self.target.is_some_and(|t| self.best >= t)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, BenchError> {
    cfg.validate()?;
    let mut report = MetricsReport::default();
    if cfg.experiment == ExperimentKind::EpsStudy {
        report.eps_curve = eps_study(cfg.eps_study.as_ref().expect("validated"))?;
        return Ok(report);
    }
    for ds in &cfg.datasets {
        log::info!("{} on {}", cfg.experiment.name(), ds.name);
        let raw = load_raw(&cfg.data_dir, ds);
        let prepared = |seed: u64| -> Result<Prepared, String> {
            let (train, test) = raw.as_ref().map_err(Clone::clone)?;
            prepare(&ds.name, train, test, cfg.validation_fraction, seed)
        };
        match cfg.experiment {
            ExperimentKind::Baseline => {
                centralized(cfg, &ds.name, "baseline", cfg.architecture_id, &prepared, &mut report);
            }
            ExperimentKind::ArchBench => {
                for &arch in &cfg.architectures {
                    centralized(cfg, &ds.name, arch.name(), arch, &prepared, &mut report);
                }
            }
            ExperimentKind::DpSweep => dp_sweep(cfg, &ds.name, &prepared, &mut report),
            ExperimentKind::FedEnsembleStudy => federated(cfg, &ds.name, None, &prepared, &mut report),
            ExperimentKind::DpFedFusion => {
                let dp = cfg.dp.expect("validated");
                for noise in cfg.noise_grid() {
                    federated(cfg, &ds.name, Some(DpConfig { noise_multiplier: noise, ..dp }), &prepared, &mut report);
                }
            }
            ExperimentKind::MpcRuntime => mpc_runtime(cfg, &ds.name, &prepared, &mut report),
            ExperimentKind::MpcInference => mpc_inference(cfg, &ds.name, &prepared, &mut report),
            ExperimentKind::EpsStudy => unreachable!(),
        }
    }
    Ok(report)
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> tsppml_core::nn::TrainConfig {
    tsppml_core::nn::TrainConfig { seed, ..cfg.train }
}

fn centralized(
    cfg: &ExperimentConfig,
    data: &str,
    method: &str,
    arch: Architecture,
    prepared: &dyn Fn(u64) -> Result<Prepared, String>,
    report: &mut MetricsReport,
) {
    let mut sweep = Sweep::new(cfg.stop_at_f1);
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let res = (|| {
            let p = prepared(seed)?;
            let model = build_model(&p.spec(arch), seed).map_err(|e| e.to_string())?;
            let out = train(model, &p.train, &p.val, &train_config(cfg, seed)).map_err(|e| e.to_string())?;
            Ok(RunResult {
                f1: test_f1(&out.model, &p.test)?,
                epsilon: None,
                epochs: out.history.len(),
                non_converged: non_converged(&out, &p.val),
            })
        })();
        let r = row(data, method, "", seed, start, res);
        sweep.record(&r);
        report.runs.push(r);
        if sweep.done() {
            break;
        }
    }
}

fn dp_params(dp: &DpConfig) -> String {
    format!("clip={};noise={}", dp.clip_norm, dp.noise_multiplier)
}

fn dp_sweep(
    cfg: &ExperimentConfig,
    data: &str,
    prepared: &dyn Fn(u64) -> Result<Prepared, String>,
    report: &mut MetricsReport,
) {
    let base = cfg.dp.expect("validated");
    for noise in cfg.noise_grid() {
        let dp = DpConfig { noise_multiplier: noise, ..base };
        let params = dp_params(&dp);
        let mut sweep = Sweep::new(cfg.stop_at_f1);
        for &seed in &cfg.seeds {
            let start = Instant::now();
            let res = (|| {
                let p = prepared(seed)?;
                let model = build_model(&p.spec(cfg.architecture_id), seed).map_err(|e| e.to_string())?;
                let out =
                    dp_train(model, &p.train, &p.val, &train_config(cfg, seed), &dp).map_err(|e| e.to_string())?;
                Ok(RunResult {
                    f1: test_f1(&out.outcome.model, &p.test)?,
                    epsilon: Some(out.privacy.epsilon),
                    epochs: out.outcome.history.len(),
                    non_converged: non_converged(&out.outcome, &p.val),
                })
            })();
            let r = row(data, "dp", &params, seed, start, res);
            sweep.record(&r);
            report.runs.push(r);
            if sweep.done() {
                break;
            }
        }
    }
}

/// The three voting schemes with silo-size weights and pooled priors.
pub fn schemes(members: &[EnsembleMember], priors: Vec<f64>) -> [EnsembleScheme; 3] {
    [
        EnsembleScheme::WeightedSoftmax { weights: size_weights(members) },
        EnsembleScheme::MajorityVote,
        EnsembleScheme::NaiveBayes { priors },
    ]
}

fn federated(
    cfg: &ExperimentConfig,
    data: &str,
    dp: Option<DpConfig>,
    prepared: &dyn Fn(u64) -> Result<Prepared, String>,
    report: &mut MetricsReport,
) {
    let params = dp.as_ref().map(dp_params).unwrap_or_default();
    let dp_label = if params.is_empty() { "none".to_string() } else { params.clone() };
    for n in cfg.client_grid() {
        for &method in &cfg.fed_methods {
            let name = match (method, dp.is_some()) {
                (FedMethod::Fedavg, false) => format!("fedavg_n{n}"),
                (FedMethod::Fedavg, true) => {
                    log::warn!("FedAVG with DP is not part of the fusion study; skipped");
                    continue;
                }
                (FedMethod::Ensemble, false) => format!("fedens_n{n}"),
                (FedMethod::Ensemble, true) => format!("dp_fedens_n{n}"),
            };
            let mut sweep = Sweep::new(cfg.stop_at_f1);
            for &seed in &cfg.seeds {
                let start = Instant::now();
                let mut extra = Vec::new();
                let res = (|| {
                    let p = prepared(seed)?;
                    let fed = fed_config(cfg, n, seed);
                    let partition = partition_silos(&p.train, n, fed.stratified, seed).map_err(|e| e.to_string())?;
                    let spec = p.spec(cfg.architecture_id);
                    let tc = train_config(cfg, seed);
                    match method {
                        FedMethod::Fedavg => {
                            let out =
                                run_fedavg(&spec, seed, &partition, &p.val, &tc, &fed).map_err(|e| e.to_string())?;
                            Ok(RunResult {
                                f1: test_f1(&out.outcome.model, &p.test)?,
                                epsilon: None,
                                epochs: out.outcome.history.len(),
                                non_converged: non_converged(&out.outcome, &p.val),
                            })
                        }
                        FedMethod::Ensemble => {
                            let members = train_ensemble(&spec, seed, &partition, &p.val, &tc, dp.as_ref())
                                .map_err(|e| e.to_string())?;
                            let models: Vec<&Model> = members.iter().map(|m| &m.outcome.model).collect();
                            let x = p.test.samples();
                            let classes = p.test.num_classes();
                            let mut primary = None;
                            for scheme in schemes(&members, pooled_priors(&partition)) {
                                let pred = ensemble_predict(&models, &scheme, &x).map_err(|e| e.to_string())?;
                                let f1 = weighted_f1(&p.test.labels, &pred, classes).map_err(|e| e.to_string())?;
                                primary.get_or_insert(f1);
                                extra.push(EnsembleRow {
                                    dataset: data.into(),
                                    num_clients: n,
                                    scheme: scheme.name().into(),
                                    dp: dp_label.clone(),
                                    seed,
                                    weighted_f1: f1,
                                });
                            }
                            let epsilon = members
                                .iter()
                                .filter_map(|m| m.privacy.map(|p| p.epsilon))
                                .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))));
                            Ok(RunResult {
                                f1: primary.expect("three schemes"),
                                epsilon,
                                epochs: members.iter().map(|m| m.outcome.history.len()).max().unwrap_or(0),
                                non_converged: members.iter().all(|m| non_converged(&m.outcome, &p.val)),
                            })
                        }
                    }
                })();
                let r = row(data, &name, &params, seed, start, res);
                sweep.record(&r);
                report.runs.push(r);
                report.ensemble_sweep.extend(extra);
                if sweep.done() {
                    break;
                }
            }
        }
    }
}

/// Baseline point plus one-at-a-time sweeps of n, b, epochs and noise.
pub fn eps_study(s: &EpsStudy) -> Result<Vec<EpsRow>, BenchError> {
    let point = |sweep: &str, n: usize, b: usize, epochs: usize, noise: f64| -> Result<EpsRow, BenchError> {
        let spent = compute_epsilon(n, b, epochs, noise, s.delta).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(EpsRow {
            sweep: sweep.into(),
            n,
            batch_size: b,
            epochs,
            noise_multiplier: noise,
            delta: s.delta,
            epsilon: spent.epsilon,
            optimal_order: spent.optimal_order,
        })
    };
    let mut rows = vec![point("base", s.n, s.batch_size, s.epochs, s.noise_multiplier)?];
    for &n in &s.n_values {
        rows.push(point("n", n, s.batch_size, s.epochs, s.noise_multiplier)?);
    }
    for &b in &s.batch_sizes {
        rows.push(point("batch_size", s.n, b, s.epochs, s.noise_multiplier)?);
    }
    for &e in &s.epoch_values {
        rows.push(point("epochs", s.n, s.batch_size, e, s.noise_multiplier)?);
    }
    for &z in &s.noise_values {
        rows.push(point("noise_multiplier", s.n, s.batch_size, s.epochs, z)?);
    }
    Ok(rows)
}

fn mpc_config(cfg: &ExperimentConfig, seed: u64) -> MpcConfig {
    let base = cfg.mpc.protocol;
    MpcConfig {
        dealer_seed: base.dealer_seed.wrapping_add(seed),
        party_seed: base.party_seed.wrapping_add(seed),
        ..base
    }
}

/// Timing rows are labelled with the mode reported by the benchmark
/// (`encrypted` or `plaintext`). Only the first seed is timed.
fn mpc_runtime(
    cfg: &ExperimentConfig,
    data: &str,
    prepared: &dyn Fn(u64) -> Result<Prepared, String>,
    report: &mut MetricsReport,
) {
    let seed = cfg.seeds[0];
    let start = Instant::now();
    let res = (|| {
        let p = prepared(seed)?;
        let model = build_model(&p.spec(cfg.architecture_id), seed).map_err(|e| e.to_string())?;
        let b = cfg.mpc.batch.min(p.test.len());
        let idx: Vec<usize> = (0..b).collect();
        let batch = p.test.batch(&idx);
        let labels = p.test.labels_of(&idx);
        let mut rows = Vec::new();
        for workload in [Workload::Inference, Workload::TrainStep] {
            let stats = benchmark_runtime(&model, &batch, &labels, workload, cfg.mpc.repeats, &mpc_config(cfg, seed))
                .map_err(|e| e.to_string())?;
            rows.extend(stats.into_iter().map(|s| RuntimeRow {
                dataset: data.into(),
                mode: s.mode.into(),
                phase: s.phase.into(),
                avg_s: s.avg_s,
                std_s: s.std_s,
                batch: s.batch,
                repeats: s.repeats,
                hardware: cfg.hardware_note.clone(),
            }));
        }
        Ok(rows)
    })();
    match res {
        Ok(rows) => report.runtimes.extend(rows),
        Err(e) => report.runs.push(row(data, "mpc_runtime", "", seed, start, Err(e))),
    }
}

/// Trains a plaintext model per seed, then compares its test predictions
/// with encrypted inference on the same inputs.
fn mpc_inference(
    cfg: &ExperimentConfig,
    data: &str,
    prepared: &dyn Fn(u64) -> Result<Prepared, String>,
    report: &mut MetricsReport,
) {
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let res = (|| {
            let p = prepared(seed)?;
            let model = build_model(&p.spec(cfg.architecture_id), seed).map_err(|e| e.to_string())?;
            let out = train(model, &p.train, &p.val, &train_config(cfg, seed)).map_err(|e| e.to_string())?;
            let enc = compare_encrypted(
                &out.model,
                &p.test,
                cfg.mpc.max_samples,
                &mpc_config(cfg, seed),
                cfg.mpc.inference_batch,
            )?;
            Ok(EncRow { dataset: data.into(), architecture: cfg.architecture_id.name().into(), seed, ..enc })
        })();
        match res {
            Ok(r) => report.enc_inference.push(r),
            Err(e) => report.runs.push(row(data, "mpc_inference", "", seed, start, Err(e))),
        }
    }
}

/// Plaintext against encrypted predictions on the first `max_samples` of
/// `test`. Dataset, architecture and seed are left for the caller to fill.
pub fn compare_encrypted(
    model: &Model,
    test: &TimeSeriesDataset,
    max_samples: Option<usize>,
    config: &MpcConfig,
    batch: usize,
) -> Result<EncRow, String> {
    let n = max_samples.map_or(test.len(), |m| m.min(test.len()));
    let idx: Vec<usize> = (0..n).collect();
    let x = test.batch(&idx);
    let labels = test.labels_of(&idx);
    let classes = test.num_classes();
    let plain = model.predict(&x).map_err(|e| e.to_string())?;
    let enc = encrypted_inference(model, &x, config, batch).map_err(|e| e.to_string())?;
    let f1 = |pred: &[usize]| weighted_f1(&labels, pred, classes).map_err(|e| e.to_string());
    Ok(EncRow {
        dataset: test.name.clone(),
        architecture: model.spec.architecture.name().into(),
        seed: 0,
        samples: n,
        f1_plain: f1(&plain)?,
        f1_encrypted: f1(&enc.predictions)?,
        agreement: accuracy(&plain, &enc.predictions),
        messages: enc.stats.iter().map(|s| s.messages_sent).sum(),
        bytes: enc.stats.iter().map(|s| s.bytes_sent).sum(),
        wall_s: enc.seconds,
    })
}
