//! Central finite-difference verification of analytic gradients.

use rand::{Rng as _, SeedableRng};

use super::{Model, Rng};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest relative error among coordinates above `abs_floor`.
    pub worst_rel: f64,
    /// Name and coordinate of the worst entry.
    pub worst_at: Option<(String, usize)>,
    /// Largest absolute difference over all coordinates.
    pub worst_abs: f64,
    pub coordinates: usize,
}

/// Compares `loss(model).1` with `(L(p + h) - L(p - h)) / 2h` on up to
/// `per_tensor` randomly chosen coordinates of every parameter tensor.
/// Differences below `abs_floor` are not scored, since the difference
/// quotient cannot resolve them.
pub fn finite_difference_check(
    model: &Model,
    h: f64,
    abs_floor: f64,
    per_tensor: usize,
    seed: u64,
    loss: impl Fn(&Model) -> (f64, ParamSet),
) -> GradCheck {
    let (_, analytic) = loss(model);
    let mut pick = Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut out = GradCheck { worst_rel: 0.0, worst_at: None, worst_abs: 0.0, coordinates: 0 };
    for (idx, entry) in model.params.iter().enumerate() {
        let n = entry.tensor.len();
        let coords: Vec<usize> =
            if n <= per_tensor { (0..n).collect() } else { (0..per_tensor).map(|_| pick.random_range(0..n)).collect() };
        for j in coords {
            let orig = entry.tensor.data()[j];
            probe.params.get_mut(idx).data_mut()[j] = orig + h;
            let up = loss(&probe).0;
            probe.params.get_mut(idx).data_mut()[j] = orig - h;
            let down = loss(&probe).0;
            probe.params.get_mut(idx).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(idx).data()[j];
            let diff = (a - numeric).abs();
            out.coordinates += 1;
            out.worst_abs = out.worst_abs.max(diff);
            if diff > abs_floor {
                let rel = diff / a.abs().max(numeric.abs());
                if rel > out.worst_rel {
                    out.worst_rel = rel;
                    out.worst_at = Some((entry.name.clone(), j));
                }
            }
        }
    }
    out
}
