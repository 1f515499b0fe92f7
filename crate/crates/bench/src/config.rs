//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsppml_core::dp::DpConfig;
use tsppml_core::federated::FederatedConfig;
use tsppml_core::mpc::MpcConfig;
use tsppml_core::nn::{Architecture, TrainConfig};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Baseline,
    ArchBench,
    DpSweep,
    EpsStudy,
    FedEnsembleStudy,
    DpFedFusion,
    MpcRuntime,
    MpcInference,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Baseline => "baseline",
            ExperimentKind::ArchBench => "arch_bench",
            ExperimentKind::DpSweep => "dp_sweep",
            ExperimentKind::EpsStudy => "eps_study",
            ExperimentKind::FedEnsembleStudy => "fed_ensemble_study",
            ExperimentKind::DpFedFusion => "dp_fed_fusion",
            ExperimentKind::MpcRuntime => "mpc_runtime",
            ExperimentKind::MpcInference => "mpc_inference",
        }
    }
}

/// A dataset given either as explicit file paths or as a UCR name under
/// `data_dir` (`<name>_TRAIN.ts`, `<name>_TEST.ts`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Keep only the first `max_train` training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_test: Option<usize>,
}

impl DatasetRef {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), train: None, test: None, max_train: None, max_test: None }
    }
}

/// Baseline point and one-at-a-time sweeps for the privacy study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsStudy {
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub n_values: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub epoch_values: Vec<usize>,
    pub noise_values: Vec<f64>,
}

impl Default for EpsStudy {
    fn default() -> Self {
        Self {
            n: 5000,
            batch_size: 32,
            epochs: 100,
            noise_multiplier: 0.5,
            delta: 1e-5,
            n_values: vec![1000, 2500, 5000, 10_000, 20_000],
            batch_sizes: vec![8, 16, 32, 64, 128],
            epoch_values: vec![10, 25, 50, 100, 200],
            noise_values: vec![0.3, 0.5, 0.75, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedMethod {
    Fedavg,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcSettings {
    #[serde(flatten)]
    pub protocol: MpcConfig,
    /// Batch used by the runtime benchmark.
    pub batch: usize,
    pub repeats: usize,
    /// Samples per encrypted forward pass during inference.
    pub inference_batch: usize,
    /// Evaluate at most this many test samples under encryption.
    pub max_samples: Option<usize>,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self { protocol: MpcConfig::default(), batch: 8, repeats: 20, inference_batch: 64, max_samples: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub datasets: Vec<DatasetRef>,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_architecture")]
    pub architecture_id: Architecture,
    /// Architectures compared by `arch_bench`.
    #[serde(default)]
    pub architectures: Vec<Architecture>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    /// Noise multipliers swept by `dp_sweep`; defaults to the single `dp` value.
    #[serde(default)]
    pub noise_multipliers: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated: Option<FederatedConfig>,
    /// Client counts for the federated studies; defaults to `federated.num_clients`.
    #[serde(default)]
    pub client_counts: Vec<usize>,
    #[serde(default = "default_fed_methods")]
    pub fed_methods: Vec<FedMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_study: Option<EpsStudy>,
    #[serde(default)]
    pub mpc: MpcSettings,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Stop a method's seed sweep once best-of-seeds F1 reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_f1: Option<f64>,
    /// Free-text machine description written into runtime reports.
    #[serde(default)]
    pub hardware_note: String,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_architecture() -> Architecture {
    Architecture::AlexNet1D
}

fn default_fed_methods() -> Vec<FedMethod> {
    vec![FedMethod::Fedavg, FedMethod::Ensemble]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_validation_fraction() -> f64 {
    0.1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn noise_grid(&self) -> Vec<f64> {
        if self.noise_multipliers.is_empty() {
            self.dp.iter().map(|d| d.noise_multiplier).collect()
        } else {
            self.noise_multipliers.clone()
        }
    }

    pub fn client_grid(&self) -> Vec<usize> {
        if self.client_counts.is_empty() {
            self.federated.iter().map(|f| f.num_clients).collect()
        } else {
            self.client_counts.clone()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        let kind = self.experiment.name();
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad(format!("validation_fraction {} outside (0, 0.5)", self.validation_fraction));
        }
        self.train.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if self.experiment != ExperimentKind::EpsStudy && self.datasets.is_empty() {
            return bad(format!("{kind} needs at least one dataset"));
        }
        match self.experiment {
            ExperimentKind::ArchBench if self.architectures.is_empty() => {
                return bad("arch_bench needs `architectures`".into());
            }
            ExperimentKind::DpSweep | ExperimentKind::DpFedFusion => {
                let Some(dp) = &self.dp else { return bad(format!("{kind} needs `dp`")) };
                for noise in self.noise_grid() {
                    DpConfig { noise_multiplier: noise, ..*dp }
                        .validate()
                        .map_err(|e| BenchError::Config(e.to_string()))?;
                }
            }
            ExperimentKind::EpsStudy if self.eps_study.is_none() => {
                return bad("eps_study needs `eps_study`".into());
            }
            _ => {}
        }
        if matches!(self.experiment, ExperimentKind::FedEnsembleStudy | ExperimentKind::DpFedFusion) {
            let Some(fed) = &self.federated else { return bad(format!("{kind} needs `federated`")) };
            if self.fed_methods.is_empty() {
                return bad("fed_methods must not be empty".into());
            }
            for n in self.client_grid() {
                let m = fed.clients_per_round.min(n);
                FederatedConfig { num_clients: n, clients_per_round: m, ..*fed }
                    .validate()
                    .map_err(|e| BenchError::Config(e.to_string()))?;
            }
        }
        if matches!(self.experiment, ExperimentKind::MpcRuntime | ExperimentKind::MpcInference) {
            if self.mpc.protocol.parties < 2 {
                return bad("mpc needs at least 2 parties".into());
            }
            if self.mpc.batch == 0 || self.mpc.inference_batch == 0 {
                return bad("mpc batch sizes must be positive".into());
            }
        }
        Ok(())
    }
}
