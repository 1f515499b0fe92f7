//! Rényi-DP accounting for the sampled Gaussian mechanism at integer orders.

use serde::{Deserialize, Serialize};

use super::DpError;

pub const MIN_ORDER: u32 = 2;
pub const MAX_ORDER: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpent {
    pub epsilon: f64,
    pub delta: f64,
    pub optimal_order: f64,
}

/// Cumulative RDP after `steps` compositions, one value per order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    pub rdp_values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(q: f64, sigma: f64, steps: u64) -> Result<RdpCurve, DpError> {
        let orders: Vec<u32> = (MIN_ORDER..=MAX_ORDER).collect();
        let rdp_values =
            orders.iter().map(|&a| rdp_sgm(q, sigma, a).map(|r| r * steps as f64)).collect::<Result<_, _>>()?;
        Ok(RdpCurve { orders, rdp_values })
    }

    /// Best (ε, α) over the curve; ties go to the smaller order.
    pub fn to_epsilon(&self, delta: f64) -> PrivacySpent {
        let log_inv_delta = -delta.ln();
        let mut best = PrivacySpent { epsilon: f64::INFINITY, delta, optimal_order: f64::from(MIN_ORDER) };
        for (&a, &rdp) in self.orders.iter().zip(&self.rdp_values) {
            let eps = rdp + log_inv_delta / f64::from(a - 1);
            if eps < best.epsilon {
                best.epsilon = eps;
                best.optimal_order = f64::from(a);
            }
        }
        best
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^x - 1)` for `x > 0`.
fn log_expm1(x: f64) -> f64 {
    if x > 1.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// Per-step RDP of the sampled Gaussian mechanism at integer order `alpha`.
///
/// The binomial expansion sums to `1 + S` where every term of `S` is
/// nonnegative, so `S` is accumulated in log-space and the result is
/// `ln(1 + S) / (alpha - 1)` without cancellation.
pub fn rdp_sgm(q: f64, sigma: f64, alpha: u32) -> Result<f64, DpError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(DpError::InvalidConfig(format!("sampling rate {q} outside [0, 1]")));
    }
    if !(sigma > 0.0) {
        return Err(DpError::InvalidConfig(format!("noise multiplier {sigma} must be positive")));
    }
    if alpha < 2 {
        return Err(DpError::InvalidConfig(format!("order {alpha} must be at least 2")));
    }
    let a = f64::from(alpha);
    if q == 0.0 || sigma.is_infinite() {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(a / (2.0 * sigma * sigma));
    }
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let mut ln_binom = a.ln(); // ln C(alpha, 1)
    let mut ln_s = f64::NEG_INFINITY;
    for k in 2..=alpha {
        let kf = f64::from(k);
        ln_binom += ((a - kf + 1.0) / kf).ln();
        let exponent = kf * (kf - 1.0) / (2.0 * sigma * sigma);
        let term = ln_binom + (a - kf) * ln_1mq + kf * ln_q + log_expm1(exponent);
        ln_s = log_add(ln_s, term);
    }
    let ln_total = if ln_s < 0.0 { ln_s.exp().ln_1p() } else { ln_s + (-ln_s).exp().ln_1p() };
    let rdp = ln_total / (a - 1.0);
    if !rdp.is_finite() {
        return Err(DpError::NumericalOverflow { q, sigma, order: alpha });
    }
    Ok(rdp)
}

/// (ε, δ) after `steps` sampled-Gaussian steps with sampling rate `q`.
pub fn epsilon_from(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<PrivacySpent, DpError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidConfig(format!("delta {delta} outside (0, 1)")));
    }
    Ok(RdpCurve::new(q, sigma, steps)?.to_epsilon(delta))
}

/// Steps taken by `epochs` passes of size-`b` minibatches over `n` samples.
pub fn steps_for(n: usize, b: usize, epochs: usize) -> u64 {
    (epochs * n.div_ceil(b)) as u64
}

/// Pre-training privacy estimate for DP-SGD with `q = b / n` and
/// `epochs * ceil(n / b)` steps.
pub fn compute_epsilon(
    n: usize,
    b: usize,
    epochs: usize,
    noise_multiplier: f64,
    delta: f64,
) -> Result<PrivacySpent, DpError> {
    if b == 0 || n < b {
        return Err(DpError::InvalidConfig(format!("need n >= b >= 1, got n = {n}, b = {b}")));
    }
    if epochs == 0 {
        return Err(DpError::InvalidConfig("epochs must be at least 1".into()));
    }
    if !(noise_multiplier > 0.0) {
        return Err(DpError::InvalidConfig(format!("noise multiplier {noise_multiplier} must be positive")));
    }
    if delta >= 1.0 / n as f64 {
        log::warn!("delta {delta} is not below 1/n = {}", 1.0 / n as f64);
    }
    epsilon_from(b as f64 / n as f64, noise_multiplier, steps_for(n, b, epochs), delta)
}
