use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::nn::Rng;

/// One party's additive share of a ring element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Share {
    pub party_id: usize,
    pub value: u64,
    pub tag: u64,
}

/// `n - 1` uniform shares and a last share completing the sum mod 2^64.
pub fn share(secret: u64, n_parties: usize, tag: u64, rng: &mut Rng) -> Result<Vec<Share>, MpcError> {
    if n_parties < 2 {
        return Err(MpcError::TooFewParties(n_parties));
    }
    let mut out = Vec::with_capacity(n_parties);
    let mut acc = 0u64;
    for party_id in 0..n_parties - 1 {
        let value: u64 = rng.random();
        acc = acc.wrapping_add(value);
        out.push(Share { party_id, value, tag });
    }
    out.push(Share { party_id: n_parties - 1, value: secret.wrapping_sub(acc), tag });
    Ok(out)
}

/// Sum of one share from each party `0..n`.
pub fn reconstruct(shares: &[Share]) -> Result<u64, MpcError> {
    let n = shares.len();
    let mut seen = vec![false; n];
    for s in shares {
        if s.party_id >= n || std::mem::replace(&mut seen[s.party_id], true) {
            return Err(MpcError::MissingShare { parties: n });
        }
    }
    if n < 2 {
        return Err(MpcError::MissingShare { parties: n });
    }
    Ok(shares.iter().fold(0u64, |a, s| a.wrapping_add(s.value)))
}

/// Party-wise addition; needs no communication.
pub fn add_shares(x: &[Share], y: &[Share]) -> Result<Vec<Share>, MpcError> {
    if x.len() != y.len() || x.iter().zip(y).any(|(a, b)| a.party_id != b.party_id) {
        return Err(MpcError::PartyMismatch);
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| Share { party_id: a.party_id, value: a.value.wrapping_add(b.value), tag: a.tag })
        .collect())
}

/// Splits every element of `secrets` into `n` additive share vectors.
pub fn share_vec(secrets: &[u64], n_parties: usize, rng: &mut Rng) -> Vec<Vec<u64>> {
    let mut parts: Vec<Vec<u64>> =
        (0..n_parties - 1).map(|_| (0..secrets.len()).map(|_| rng.random()).collect()).collect();
    let last =
        secrets.iter().enumerate().map(|(i, s)| parts.iter().fold(*s, |acc, p| acc.wrapping_sub(p[i]))).collect();
    parts.push(last);
    parts
}

/// Elementwise sum of share vectors.
pub fn reconstruct_vec(parts: &[Vec<u64>]) -> Vec<u64> {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        for (o, v) in out.iter_mut().zip(p) {
            *o = o.wrapping_add(*v);
        }
    }
    out
}
