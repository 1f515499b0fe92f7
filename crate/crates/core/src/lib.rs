//! Privacy-preserving time-series classification.
//!
//! * [`nn`]: 1D conv / dense / bidirectional LSTM classifiers with
//!   reverse-mode gradients and an SGD training loop.
//! * [`data`]: `.ts` ingestion, normalization, splits and client silos.
//! * [`dp`]: DP-SGD and a Rényi-DP accountant.
//! * [`federated`]: FedAVG, federated ensembles and their DP fusion.
//! * [`mpc`]: additive secret sharing with Beaver triples and encrypted inference.

pub mod data;
pub mod dp;
pub mod federated;
pub mod metrics;
pub mod mpc;
pub mod nn;
pub mod tensor;
