//! Trusted dealer for correlated randomness.
//!
//! Parties request material in the same order; request `k` is generated
//! from the dealer seed on stream `k`, so the material does not depend on
//! which party asks first. Shares for the other parties are parked until
//! they collect them.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng as _, SeedableRng};

use super::ring::ring_matmul;
use super::share::share_vec;
use super::MpcError;
use crate::nn::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    /// Elementwise arithmetic triples `c = a * b`.
    Triple(usize),
    /// `C = A B` with `A: m x k`, `B: k x n`.
    MatTriple { m: usize, k: usize, n: usize },
    /// XOR-shared words with `c = a & b`.
    BinaryTriple(usize),
    /// Random `r`, its XOR sharing and arithmetic shares of `r >> f` and
    /// of the top bit of `r`.
    Truncation { len: usize, frac_bits: u32 },
    /// Random bits shared both by XOR (bit 0) and arithmetically.
    RandomBit(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Material {
    Triple { a: Vec<u64>, b: Vec<u64>, c: Vec<u64> },
    Truncation { r: Vec<u64>, r_bits: Vec<u64>, r_hi: Vec<u64>, r_top: Vec<u64> },
    RandomBit { xor: Vec<u64>, arith: Vec<u64> },
}

struct Pending {
    request: Request,
    shares: Vec<Option<Material>>,
    remaining: usize,
}

pub struct Dealer {
    seed: u64,
    parties: usize,
    pending: Mutex<HashMap<u64, Pending>>,
}

fn xor_share(values: &[u64], n: usize, rng: &mut Rng) -> Vec<Vec<u64>> {
    let mut parts: Vec<Vec<u64>> = (0..n - 1).map(|_| (0..values.len()).map(|_| rng.random()).collect()).collect();
    let last = values.iter().enumerate().map(|(i, v)| parts.iter().fold(*v, |acc, p| acc ^ p[i])).collect();
    parts.push(last);
    parts
}

fn random_vec(len: usize, rng: &mut Rng) -> Vec<u64> {
    (0..len).map(|_| rng.random()).collect()
}

impl Dealer {
    pub fn new(seed: u64, parties: usize) -> Self {
        Self { seed, parties, pending: Mutex::new(HashMap::new()) }
    }

    fn generate(&self, counter: u64, request: Request) -> Vec<Material> {
        let mut rng = Rng::seed_from_u64(self.seed);
        rng.set_stream(counter);
        let n = self.parties;
        let triples = |a: Vec<u64>, b: Vec<u64>, c: Vec<u64>, rng: &mut Rng, xor: bool| -> Vec<Material> {
            let split = |v: &[u64], rng: &mut Rng| if xor { xor_share(v, n, rng) } else { share_vec(v, n, rng) };
            let (sa, sb, sc) = (split(&a, rng), split(&b, rng), split(&c, rng));
            sa.into_iter().zip(sb).zip(sc).map(|((a, b), c)| Material::Triple { a, b, c }).collect()
        };
        match request {
            Request::Triple(len) => {
                let (a, b) = (random_vec(len, &mut rng), random_vec(len, &mut rng));
                let c = a.iter().zip(&b).map(|(x, y)| x.wrapping_mul(*y)).collect();
                triples(a, b, c, &mut rng, false)
            }
            Request::MatTriple { m, k, n: cols } => {
                let (a, b) = (random_vec(m * k, &mut rng), random_vec(k * cols, &mut rng));
                let c = ring_matmul(&a, &b, m, k, cols);
                triples(a, b, c, &mut rng, false)
            }
            Request::BinaryTriple(len) => {
                let (a, b) = (random_vec(len, &mut rng), random_vec(len, &mut rng));
                let c = a.iter().zip(&b).map(|(x, y)| x & y).collect();
                triples(a, b, c, &mut rng, true)
            }
            Request::Truncation { len, frac_bits } => {
                let r = random_vec(len, &mut rng);
                let hi: Vec<u64> = r.iter().map(|v| v >> frac_bits).collect();
                let sr = share_vec(&r, n, &mut rng);
                let sbits = xor_share(&r, n, &mut rng);
                let top: Vec<u64> = r.iter().map(|v| v >> 63).collect();
                let shi = share_vec(&hi, n, &mut rng);
                let stop = share_vec(&top, n, &mut rng);
                sr.into_iter()
                    .zip(sbits)
                    .zip(shi)
                    .zip(stop)
                    .map(|(((r, r_bits), r_hi), r_top)| Material::Truncation { r, r_bits, r_hi, r_top })
                    .collect()
            }
            Request::RandomBit(len) => {
                let bits: Vec<u64> = (0..len).map(|_| rng.random::<u64>() & 1).collect();
                let sx = xor_share(&bits, n, &mut rng);
                let sa = share_vec(&bits, n, &mut rng);
                sx.into_iter().zip(sa).map(|(xor, arith)| Material::RandomBit { xor, arith }).collect()
            }
        }
    }

    /// Party `party`'s share of request number `counter`.
    pub fn fetch(&self, party: usize, counter: u64, request: Request) -> Result<Material, MpcError> {
        let mut pending = self.pending.lock().expect("dealer lock");
        let entry = pending.entry(counter).or_insert_with(|| Pending {
            request,
            shares: self.generate(counter, request).into_iter().map(Some).collect(),
            remaining: self.parties,
        });
        if entry.request != request {
            return Err(MpcError::Desync(format!(
                "request {counter}: party {party} asked for {request:?}, dealer issued {:?}",
                entry.request
            )));
        }
        let share = entry.shares[party]
            .take()
            .ok_or_else(|| MpcError::Desync(format!("party {party} fetched request {counter} twice")))?;
        entry.remaining -= 1;
        if entry.remaining == 0 {
            pending.remove(&counter);
        }
        Ok(share)
    }
}
