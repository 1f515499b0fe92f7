use serde::{Deserialize, Serialize};

use super::MpcError;

/// Fixed-point reals in the ring of integers modulo 2^64, two's complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { frac_bits: 16 }
    }
}

pub const RING_BITS: u32 = 64;

impl FixedPointCodec {
    pub fn new(frac_bits: u32) -> Self {
        assert!(frac_bits < RING_BITS - 2, "frac_bits must leave room for the integer part");
        Self { frac_bits }
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Exclusive bound on encodable magnitudes, `2^(62 - f)`.
    pub fn max_abs(&self) -> f64 {
        2f64.powi((RING_BITS - self.frac_bits - 2) as i32)
    }

    pub fn encode(&self, x: f64) -> Result<u64, MpcError> {
        if !(x.abs() < self.max_abs()) {
            return Err(MpcError::OutOfRange(x));
        }
        Ok((x * self.scale()).round() as i64 as u64)
    }

    pub fn decode(&self, r: u64) -> f64 {
        r as i64 as f64 / self.scale()
    }

    pub fn encode_all(&self, xs: &[f64]) -> Result<Vec<u64>, MpcError> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_all(&self, rs: &[u64]) -> Vec<f64> {
        rs.iter().map(|&r| self.decode(r)).collect()
    }
}
