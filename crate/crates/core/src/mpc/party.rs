//! One party's view of the protocol: communication, dealer material and
//! the arithmetic/binary share operations built on them.

use std::collections::HashSet;
use std::sync::Arc;

use rand::SeedableRng;
use serde::Serialize;

use super::codec::FixedPointCodec;
use super::dealer::{Dealer, Material, Request};
use super::ring::{add, ring_matmul_acc, sub};
use super::share::share_vec;
use super::transport::{Message, Transport};
use super::MpcError;
use crate::nn::Rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub rounds: u64,
    pub dealer_requests: u64,
}

/// One sent message, identified by its payload digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TranscriptEntry {
    pub from: usize,
    pub to: usize,
    pub tag: u64,
    pub round: u32,
    pub len: usize,
    pub digest: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// One party's shares of a dealer-issued multiplication triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaverTriple {
    pub id: u64,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

#[derive(Clone, Copy)]
#[repr(u8)]
enum Kind {
    Open = 1,
    OpenXor = 2,
    Input = 3,
    Reveal = 4,
    Exchange = 5,
}

fn to_bytes(v: &[u64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_bytes(b: &[u8]) -> Vec<u64> {
    b.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
}

const SHIFTS: [u32; 6] = [1, 2, 4, 8, 16, 32];

fn lane_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// The 32 bits at even positions of `v`, packed densely.
fn compact_even(v: u64) -> u64 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | x >> 1) & 0x3333_3333_3333_3333;
    x = (x | x >> 2) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x >> 4) & 0x00ff_00ff_00ff_00ff;
    x = (x | x >> 8) & 0x0000_ffff_0000_ffff;
    (x | x >> 16) & 0x0000_0000_ffff_ffff
}

/// Bits `2i + shift` of a packed bit string, repacked densely.
fn halve(words: &[u64], shift: u32) -> Vec<u64> {
    words
        .chunks(2)
        .map(|c| compact_even(c[0] >> shift) | c.get(1).map_or(0, |&w| compact_even(w >> shift) << 32))
        .collect()
}

/// Packs the low `width` bits of each value, `64 / width` values per word.
fn pack_lanes(values: &[u64], width: u32) -> Vec<u64> {
    if width == 64 {
        return values.to_vec();
    }
    let per = (64 / width) as usize;
    let mask = lane_mask(width);
    values
        .chunks(per)
        .map(|c| c.iter().enumerate().fold(0u64, |acc, (i, v)| acc | (v & mask) << (i as u32 * width)))
        .collect()
}

fn unpack_bits(words: &[u64], len: usize) -> Vec<u64> {
    (0..len).map(|i| (words[i / 64] >> (i % 64)) & 1).collect()
}

pub struct Party {
    id: usize,
    n: usize,
    transport: Box<dyn Transport>,
    dealer: Arc<Dealer>,
    codec: FixedPointCodec,
    requests: u64,
    round: u32,
    used_triples: HashSet<u64>,
    stats: CommStats,
    transcript: Option<Vec<TranscriptEntry>>,
    rng: Rng,
}

impl Party {
    /// `seed` drives the masks this party uses when sharing its own inputs.
    pub fn new(
        transport: Box<dyn Transport>,
        dealer: Arc<Dealer>,
        codec: FixedPointCodec,
        seed: u64,
        record: bool,
    ) -> Self {
        let id = transport.party_id();
        let n = transport.num_parties();
        let mut rng = Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        Self {
            id,
            n,
            transport,
            dealer,
            codec,
            requests: 0,
            round: 0,
            used_triples: HashSet::new(),
            stats: CommStats::default(),
            transcript: record.then(Vec::new),
            rng,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn num_parties(&self) -> usize {
        self.n
    }

    pub fn codec(&self) -> FixedPointCodec {
        self.codec
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    pub fn take_transcript(&mut self) -> Vec<TranscriptEntry> {
        self.transcript.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn material(&mut self, request: Request) -> Result<(u64, Material), MpcError> {
        let counter = self.requests;
        self.requests += 1;
        self.stats.dealer_requests += 1;
        Ok((counter, self.dealer.fetch(self.id, counter, request)?))
    }

    fn send(&mut self, to: usize, kind: Kind, payload: Vec<u8>) -> Result<(), MpcError> {
        let tag = (kind as u64) << 56 | u64::from(self.round);
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry {
                from: self.id,
                to,
                tag,
                round: self.round,
                len: payload.len(),
                digest: fnv1a(&payload),
            });
        }
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += payload.len() as u64;
        self.transport.send(to, Message { tag, round: self.round, payload })
    }

    fn recv(&mut self, from: usize, kind: Kind, words: usize) -> Result<Vec<u64>, MpcError> {
        let msg = self.transport.recv(from)?;
        let tag = (kind as u64) << 56 | u64::from(self.round);
        if msg.tag != tag || msg.round != self.round || msg.payload.len() != 8 * words {
            return Err(MpcError::Desync(format!(
                "party {} round {}: expected tag {tag:#x} with {words} words from {from}, got tag {:#x} round {} ({} bytes)",
                self.id,
                self.round,
                msg.tag,
                msg.round,
                msg.payload.len()
            )));
        }
        Ok(from_bytes(&msg.payload))
    }

    fn end_round(&mut self) {
        self.round = self.round.wrapping_add(1);
        self.stats.rounds += 1;
    }

    /// Sends `data` to every other party and collects theirs; entry `i` is
    /// party `i`'s vector.
    fn all_to_all(&mut self, kind: Kind, data: &[u64]) -> Result<Vec<Vec<u64>>, MpcError> {
        let bytes = to_bytes(data);
        let me = self.id;
        for j in (0..self.n).filter(|&j| j != me) {
            self.send(j, kind, bytes.clone())?;
        }
        let mut out = Vec::with_capacity(self.n);
        for j in 0..self.n {
            out.push(if j == self.id { data.to_vec() } else { self.recv(j, kind, data.len())? });
        }
        self.end_round();
        Ok(out)
    }

    /// Reveals an arithmetically shared vector to everyone.
    pub fn open(&mut self, x: &[u64]) -> Result<Vec<u64>, MpcError> {
        let parts = self.all_to_all(Kind::Open, x)?;
        Ok(parts.iter().skip(1).fold(parts[0].clone(), |acc, p| add(&acc, p)))
    }

    /// Reveals an XOR-shared vector to everyone.
    pub fn open_xor(&mut self, x: &[u64]) -> Result<Vec<u64>, MpcError> {
        let parts = self.all_to_all(Kind::OpenXor, x)?;
        Ok(parts.iter().skip(1).fold(parts[0].clone(), |acc, p| acc.iter().zip(p).map(|(a, b)| a ^ b).collect()))
    }

    /// Secret-shares `values` held by `owner`; everyone gets its share of a
    /// vector of length `len`.
    pub fn input(&mut self, owner: usize, values: Option<&[u64]>, len: usize) -> Result<Vec<u64>, MpcError> {
        let mine = if owner == self.id {
            let values = values.ok_or_else(|| MpcError::Desync("input owner supplied no values".into()))?;
            if values.len() != len {
                return Err(MpcError::Desync(format!("input of {} values, {len} announced", values.len())));
            }
            let mut parts = share_vec(values, self.n, &mut self.rng);
            for (j, part) in parts.iter().enumerate() {
                if j != self.id {
                    self.send(j, Kind::Input, to_bytes(part))?;
                }
            }
            std::mem::take(&mut parts[self.id])
        } else {
            self.recv(owner, Kind::Input, len)?
        };
        self.end_round();
        Ok(mine)
    }

    /// Fixed-point encodes and shares reals held by `owner`.
    pub fn input_reals(&mut self, owner: usize, values: Option<&[f64]>, len: usize) -> Result<Vec<u64>, MpcError> {
        let encoded = values.map(|v| self.codec.encode_all(v)).transpose()?;
        self.input(owner, encoded.as_deref(), len)
    }

    /// Opens `x` to `owner` only.
    pub fn reveal_to(&mut self, owner: usize, x: &[u64]) -> Result<Option<Vec<u64>>, MpcError> {
        let out = if owner == self.id {
            let mut acc = x.to_vec();
            for j in (0..self.n).filter(|&j| j != owner) {
                acc = add(&acc, &self.recv(j, Kind::Reveal, x.len())?);
            }
            Some(acc)
        } else {
            self.send(owner, Kind::Reveal, to_bytes(x))?;
            None
        };
        self.end_round();
        Ok(out)
    }

    /// Adds a public vector (party 0 holds it).
    pub fn add_public(&self, x: &[u64], c: &[u64]) -> Vec<u64> {
        if self.id == 0 {
            add(x, c)
        } else {
            x.to_vec()
        }
    }

    fn add_public_scalar(&self, x: &mut [u64], c: u64) {
        if self.id == 0 {
            x.iter_mut().for_each(|v| *v = v.wrapping_add(c));
        }
    }

    pub fn beaver_triple(&mut self, len: usize) -> Result<BeaverTriple, MpcError> {
        match self.material(Request::Triple(len))? {
            (id, Material::Triple { a, b, c }) => Ok(BeaverTriple { id, a, b, c }),
            _ => unreachable!("dealer answers a triple request with a triple"),
        }
    }

    /// Beaver multiplication with an explicit triple (raw ring product).
    pub fn mul_with(&mut self, x: &[u64], y: &[u64], triple: &BeaverTriple) -> Result<Vec<u64>, MpcError> {
        if !self.used_triples.insert(triple.id) {
            return Err(MpcError::TripleReuse(triple.id));
        }
        if x.len() != y.len() || triple.a.len() != x.len() {
            return Err(MpcError::Desync(format!(
                "multiplying {} by {} with a triple of {}",
                x.len(),
                y.len(),
                triple.a.len()
            )));
        }
        let mut masked = sub(x, &triple.a);
        masked.extend(sub(y, &triple.b));
        let opened = self.open(&masked)?;
        let (eps, del) = opened.split_at(x.len());
        let lead = self.id == 0;
        Ok((0..x.len())
            .map(|i| {
                let mut z = triple.c[i]
                    .wrapping_add(eps[i].wrapping_mul(triple.b[i]))
                    .wrapping_add(del[i].wrapping_mul(triple.a[i]));
                if lead {
                    z = z.wrapping_add(eps[i].wrapping_mul(del[i]));
                }
                z
            })
            .collect())
    }

    /// Elementwise ring product of two shared vectors.
    pub fn mul(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>, MpcError> {
        let t = self.beaver_triple(x.len())?;
        self.mul_with(x, y, &t)
    }

    /// Fixed-point product: ring product followed by exact truncation.
    pub fn mul_fixed(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>, MpcError> {
        let p = self.mul(x, y)?;
        self.truncate(&p)
    }

    /// Ring matrix product of shared `x: m x k` and `w: k x n`.
    pub fn matmul(&mut self, x: &[u64], w: &[u64], m: usize, k: usize, n: usize) -> Result<Vec<u64>, MpcError> {
        let (id, Material::Triple { a, b, c }) = self.material(Request::MatTriple { m, k, n })? else {
            unreachable!("dealer answers a matrix request with a triple")
        };
        if !self.used_triples.insert(id) {
            return Err(MpcError::TripleReuse(id));
        }
        let mut masked = sub(x, &a);
        masked.extend(sub(w, &b));
        let opened = self.open(&masked)?;
        let (e, f) = opened.split_at(m * k);
        let mut z = c;
        ring_matmul_acc(e, &b, m, k, n, &mut z);
        ring_matmul_acc(&a, f, m, k, n, &mut z);
        if self.id == 0 {
            ring_matmul_acc(e, f, m, k, n, &mut z);
        }
        Ok(z)
    }

    /// Matrix product followed by truncation.
    pub fn matmul_fixed(&mut self, x: &[u64], w: &[u64], m: usize, k: usize, n: usize) -> Result<Vec<u64>, MpcError> {
        let p = self.matmul(x, w, m, k, n)?;
        self.truncate(&p)
    }

    /// Multiplies by a public fixed-point scalar and truncates.
    pub fn mul_public_fixed(&mut self, x: &[u64], c: f64) -> Result<Vec<u64>, MpcError> {
        let c = self.codec.encode(c)?;
        let p: Vec<u64> = x.iter().map(|v| v.wrapping_mul(c)).collect();
        self.truncate(&p)
    }

    /// AND of XOR-shared words.
    pub fn and(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>, MpcError> {
        let (_, Material::Triple { a, b, c }) = self.material(Request::BinaryTriple(x.len()))? else {
            unreachable!("binary triple")
        };
        let mut masked: Vec<u64> = x.iter().zip(&a).map(|(v, m)| v ^ m).collect();
        masked.extend(y.iter().zip(&b).map(|(v, m)| v ^ m));
        let opened = self.open_xor(&masked)?;
        let (d, e) = opened.split_at(x.len());
        let lead = self.id == 0;
        Ok((0..x.len())
            .map(|i| {
                let mut z = c[i] ^ (d[i] & b[i]) ^ (e[i] & a[i]);
                if lead {
                    z ^= d[i] & e[i];
                }
                z
            })
            .collect())
    }

    /// Carry out of each lane for XOR-shared generate/propagate bits packed
    /// in lanes of `width` bits; one result bit per lane, packed 64 per word.
    ///
    /// Each level combines adjacent bit pairs and keeps only the combined
    /// values, so the data halves from level to level.
    fn lane_carries(&mut self, mut g: Vec<u64>, mut p: Vec<u64>, width: u32) -> Result<Vec<u64>, MpcError> {
        let mut w = width;
        while w > 1 {
            let (g_lo, g_hi) = (halve(&g, 0), halve(&g, 1));
            let (p_lo, p_hi) = (halve(&p, 0), halve(&p, 1));
            let k = g_lo.len();
            let last = w == 2;
            let mut lhs = p_hi.clone();
            let mut rhs = g_lo;
            if !last {
                lhs.extend_from_slice(&p_hi);
                rhs.extend_from_slice(&p_lo);
            }
            let prod = self.and(&lhs, &rhs)?;
            g = g_hi.iter().zip(&prod[..k]).map(|(h, t)| h ^ t).collect();
            if !last {
                p = prod[k..].to_vec();
            }
            w /= 2;
        }
        Ok(g)
    }

    /// XOR-shared `[r > c]` (bit 0) for XOR-shared `r` and public `c`,
    /// comparing the low `bits` bits.
    fn greater_than_public(&mut self, r: &[u64], c: &[u64], bits: u32) -> Result<Vec<u64>, MpcError> {
        let width = bits.next_power_of_two();
        let lane = lane_mask(width);
        let mask = lane_mask(bits);
        let lead = self.id == 0;
        let g: Vec<u64> = r.iter().zip(c).map(|(r, c)| r & !c & mask).collect();
        // equal bits propagate; bits outside the compared range count as equal
        let e: Vec<u64> =
            r.iter().zip(c).map(|(r, c)| if lead { ((r ^ !c) & mask) | (lane & !mask) } else { r & mask }).collect();
        let carries = self.lane_carries(pack_lanes(&g, width), pack_lanes(&e, width), width)?;
        Ok(unpack_bits(&carries, r.len()))
    }

    /// Converts XOR-shared bits (bit 0) to arithmetic shares of 0/1.
    pub fn bits_to_arith(&mut self, bits: &[u64]) -> Result<Vec<u64>, MpcError> {
        let (_, Material::RandomBit { xor, arith }) = self.material(Request::RandomBit(bits.len()))? else {
            unreachable!("random bits")
        };
        let masked: Vec<u64> = bits.iter().zip(&xor).map(|(b, t)| (b ^ t) & 1).collect();
        let e = unpack_bits(&self.open_xor(&pack_lanes(&masked, 1))?, bits.len());
        let lead = self.id == 0;
        Ok(e.iter()
            .zip(&arith)
            .map(|(&e, &t)| {
                let v = if e == 1 { t.wrapping_neg() } else { t };
                if lead {
                    v.wrapping_add(e)
                } else {
                    v
                }
            })
            .collect())
    }

    /// Exact floor division by `2^f` of signed values with `|x| < 2^62`.
    ///
    /// With `y = x + 2^62` below `2^63`, opening `c = y + r` wraps exactly
    /// when `msb(r) = 1` and `msb(c) = 0`, so only the borrow out of the low
    /// `f` bits needs a comparison circuit.
    pub fn truncate(&mut self, x: &[u64]) -> Result<Vec<u64>, MpcError> {
        let f = self.codec.frac_bits;
        let len = x.len();
        let (_, Material::Truncation { r, r_bits, r_hi, r_top }) =
            self.material(Request::Truncation { len, frac_bits: f })?
        else {
            unreachable!("truncation pair")
        };
        let offset = 1u64 << 62;
        let mut y = x.to_vec();
        self.add_public_scalar(&mut y, offset);
        let c = self.open(&add(&y, &r))?;
        let borrow = self.greater_than_public(&r_bits, &c, f)?;
        let b = self.bits_to_arith(&borrow)?;
        let lead = self.id == 0;
        Ok((0..len)
            .map(|i| {
                let wrap = if c[i] >> 63 == 0 { r_top[i] } else { 0 };
                let mut z = wrap.wrapping_shl(64 - f).wrapping_sub(r_hi[i]).wrapping_sub(b[i]);
                if lead {
                    z = z.wrapping_add(c[i] >> f).wrapping_sub(offset >> f);
                }
                z
            })
            .collect())
    }

    /// Sum of two XOR-shared words (Kogge-Stone carry prefix).
    pub fn add_binary(&mut self, a: &[u64], b: &[u64]) -> Result<Vec<u64>, MpcError> {
        let len = a.len();
        let p: Vec<u64> = a.iter().zip(b).map(|(x, y)| x ^ y).collect();
        let mut g = self.and(a, b)?;
        let mut pp = p.clone();
        for (level, s) in SHIFTS.into_iter().enumerate() {
            let last = level + 1 == SHIFTS.len();
            let mut lhs = pp.clone();
            let mut rhs: Vec<u64> = g.iter().map(|v| v << s).collect();
            if !last {
                lhs.extend_from_slice(&pp);
                rhs.extend(pp.iter().map(|v| v << s));
            }
            let prod = self.and(&lhs, &rhs)?;
            g = g.iter().zip(&prod[..len]).map(|(g, t)| g ^ t).collect();
            if !last {
                pp = prod[len..].to_vec();
            }
        }
        Ok(p.iter().zip(&g).map(|(p, g)| p ^ (g << 1)).collect())
    }

    /// XOR sharing of the value held in arithmetic shares.
    pub fn arith_to_binary(&mut self, x: &[u64]) -> Result<Vec<u64>, MpcError> {
        let zeros = vec![0u64; x.len()];
        let me = self.id;
        let own = |p: usize| if p == me { x.to_vec() } else { zeros.clone() };
        let mut acc = own(0);
        for p in 1..self.n {
            let addend = own(p);
            acc = self.add_binary(&acc, &addend)?;
        }
        Ok(acc)
    }

    /// XOR-shared most significant bit (bit 0) of `a + b` for XOR-shared
    /// words: a carry tree over bits 0..63 instead of the full adder.
    fn msb_of_sum(&mut self, a: &[u64], b: &[u64]) -> Result<Vec<u64>, MpcError> {
        const TOP: u64 = 1 << 63;
        let lead = self.id == 0;
        let sum_bits: Vec<u64> = a.iter().zip(b).map(|(x, y)| x ^ y).collect();
        let g: Vec<u64> = self.and(a, b)?.into_iter().map(|v| v & !TOP).collect();
        // bit 63 propagates so the tree yields the carry into it
        let p: Vec<u64> = sum_bits.iter().map(|v| (v & !TOP) | if lead { TOP } else { 0 }).collect();
        let carries = unpack_bits(&self.lane_carries(g, p, 64)?, a.len());
        Ok(carries.iter().zip(&sum_bits).map(|(c, s)| c ^ (s >> 63)).collect())
    }

    /// Arithmetic shares of `[x < 0]`: the shares are summed in binary and
    /// only the top bit of the sum is formed.
    pub fn sign_bit(&mut self, x: &[u64]) -> Result<Vec<u64>, MpcError> {
        let zeros = vec![0u64; x.len()];
        let me = self.id;
        let own = |p: usize| if p == me { x.to_vec() } else { zeros.clone() };
        let mut acc = own(0);
        for p in 1..self.n - 1 {
            let addend = own(p);
            acc = self.add_binary(&acc, &addend)?;
        }
        let last = own(self.n - 1);
        let msb = self.msb_of_sum(&acc, &last)?;
        self.bits_to_arith(&msb)
    }

    /// `max(x, 0)` and the arithmetic indicator `[x >= 0]`.
    pub fn relu_with_mask(&mut self, x: &[u64]) -> Result<(Vec<u64>, Vec<u64>), MpcError> {
        let neg = self.sign_bit(x)?;
        let mut keep: Vec<u64> = neg.iter().map(|v| v.wrapping_neg()).collect();
        self.add_public_scalar(&mut keep, 1);
        let y = self.mul(x, &keep)?;
        Ok((y, keep))
    }

    pub fn relu(&mut self, x: &[u64]) -> Result<Vec<u64>, MpcError> {
        Ok(self.relu_with_mask(x)?.0)
    }

    /// Elementwise `max(a, b)` and the indicator `[a >= b]`.
    pub fn max_with_mask(&mut self, a: &[u64], b: &[u64]) -> Result<(Vec<u64>, Vec<u64>), MpcError> {
        let (r, sel) = self.relu_with_mask(&sub(a, b))?;
        Ok((add(b, &r), sel))
    }

    pub fn max(&mut self, a: &[u64], b: &[u64]) -> Result<Vec<u64>, MpcError> {
        Ok(self.max_with_mask(a, b)?.0)
    }

    /// Exchanges arbitrary equal-length vectors (used for public metadata).
    pub fn exchange_public(&mut self, data: &[u64]) -> Result<Vec<Vec<u64>>, MpcError> {
        self.all_to_all(Kind::Exchange, data)
    }
}
