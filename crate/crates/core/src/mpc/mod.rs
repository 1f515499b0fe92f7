//! Additive secret sharing over `Z_2^64` for a semi-honest party set with a
//! trusted dealer.
//!
//! Each party runs on its own thread with a [`Party`] context and talks to
//! the others only through a [`Transport`]. [`run_protocol`] wires up the
//! parties, runs the same closure on each and collects their results.

mod bench;
mod codec;
mod dealer;
mod inference;
mod party;
mod ring;
mod share;
mod train_step;
mod transport;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;

pub use bench::{benchmark_runtime, RuntimeStats, Workload};
pub use codec::{FixedPointCodec, RING_BITS};
pub use dealer::{Dealer, Material, Request};
pub use inference::{
    encrypted_forward, encrypted_inference, feature_aggregate, share_model, InferenceOutcome, ModelLayout, SharedModel,
};
pub use party::{BeaverTriple, CommStats, Party, TranscriptEntry};
pub use ring::{ring_matmul, transpose};
pub use share::{add_shares, reconstruct, reconstruct_vec, share, share_vec, Share};
pub use train_step::encrypted_train_step;
pub use transport::{
    encode_frame, in_process_mesh, read_frame, tcp_mesh, InProcessTransport, Message, TcpTransport, Transport,
    FRAME_HEADER_LEN, MAX_FRAME_PAYLOAD,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("value {0} outside the fixed-point range")]
    OutOfRange(f64),
    #[error("secret sharing needs at least 2 parties, got {0}")]
    TooFewParties(usize),
    #[error("reconstruction needs exactly one share from each of {parties} parties")]
    MissingShare { parties: usize },
    #[error("share vectors belong to different party sets")]
    PartyMismatch,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol desynchronized: {0}")]
    Desync(String),
    #[error("Beaver triple {0} used twice")]
    TripleReuse(u64),
    #[error("layer '{0}' cannot be evaluated on shares")]
    UnsupportedLayer(String),
    #[error("sample ids differ between parties: {0}")]
    SampleIdMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub parties: usize,
    pub frac_bits: u32,
    pub dealer_seed: u64,
    pub party_seed: u64,
    pub transport: TransportKind,
    pub record_transcript: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            parties: 2,
            frac_bits: 16,
            dealer_seed: 0,
            party_seed: 1,
            transport: TransportKind::InProcess,
            record_transcript: false,
        }
    }
}

impl MpcConfig {
    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec::new(self.frac_bits)
    }

    /// The party that supplies inputs and receives outputs.
    pub fn data_owner(&self) -> usize {
        self.parties - 1
    }
}

/// Per-party results of one protocol execution.
#[derive(Debug, Clone)]
pub struct ProtocolRun<T> {
    pub outputs: Vec<T>,
    pub stats: Vec<CommStats>,
    pub transcripts: Vec<Vec<TranscriptEntry>>,
}

/// Runs `body` on every party concurrently and returns the outputs in party
/// order. When a party fails its channels close and the others fail too;
/// the reported error is the first one that is not a transport error.
pub fn run_protocol<T, F>(config: &MpcConfig, body: F) -> Result<ProtocolRun<T>, MpcError>
where
    T: Send,
    F: Fn(&mut Party) -> Result<T, MpcError> + Sync,
{
    if config.parties < 2 {
        return Err(MpcError::TooFewParties(config.parties));
    }
    let transports: Vec<Box<dyn Transport>> = match config.transport {
        TransportKind::InProcess => {
            in_process_mesh(config.parties).into_iter().map(|t| Box::new(t) as Box<dyn Transport>).collect()
        }
        TransportKind::Tcp => {
            tcp_mesh(config.parties)?.into_iter().map(|t| Box::new(t) as Box<dyn Transport>).collect()
        }
    };
    let dealer = Arc::new(Dealer::new(config.dealer_seed, config.parties));
    let codec = config.codec();
    let body = &body;
    let results: Vec<Result<(T, CommStats, Vec<TranscriptEntry>), MpcError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = transports
            .into_iter()
            .map(|transport| {
                let dealer = Arc::clone(&dealer);
                scope.spawn(move || {
                    let mut party = Party::new(transport, dealer, codec, config.party_seed, config.record_transcript);
                    let out = body(&mut party)?;
                    Ok((out, party.stats(), party.take_transcript()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("party thread panicked")).collect()
    });
    if results.iter().any(Result::is_err) {
        let errors: Vec<MpcError> = results.into_iter().filter_map(Result::err).collect();
        let root = errors.iter().find(|e| !matches!(e, MpcError::Transport(_))).unwrap_or(&errors[0]);
        return Err(root.clone());
    }
    let mut run = ProtocolRun { outputs: Vec::new(), stats: Vec::new(), transcripts: Vec::new() };
    for (out, stats, transcript) in results.into_iter().map(Result::unwrap) {
        run.outputs.push(out);
        run.stats.push(stats);
        run.transcripts.push(transcript);
    }
    Ok(run)
}
