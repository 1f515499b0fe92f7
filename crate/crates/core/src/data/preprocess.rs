use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesDataset};

/// Standard deviations below this are raised to it.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel affine z-normalization fitted on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean/std per channel over every sample and time step.
    pub fn fit(ds: &TimeSeriesDataset) -> Normalizer {
        let (c, l) = (ds.channels, ds.length);
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let vals = || (0..ds.len()).flat_map(move |i| ds.series(i)[ch * l..(ch + 1) * l].iter().copied());
            let count = (ds.len() * l) as f64;
            let (lo, hi) = vals().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            // exact mean for constant channels so they map to exact zeros
            let m = if lo == hi { lo } else { vals().sum::<f64>() / count };
            let var = vals().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            mean[ch] = m;
            std[ch] = var.sqrt().max(STD_FLOOR);
        }
        Normalizer { mean, std }
    }

    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset, DataError> {
        if ds.channels != self.mean.len() {
            return Err(DataError::ShapeMismatch(format!(
                "normalizer fitted on {} channel(s), dataset '{}' has {}",
                self.mean.len(),
                ds.name,
                ds.channels
            )));
        }
        let mut out = ds.clone();
        let l = ds.length;
        for row in out.values.chunks_mut(ds.channels * l) {
            for (ch, vals) in row.chunks_mut(l).enumerate() {
                for v in vals {
                    *v = (*v - self.mean[ch]) / self.std[ch];
                }
            }
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same transform to `train` and `others`.
pub fn znormalize(
    train: &TimeSeriesDataset,
    others: &[&TimeSeriesDataset],
) -> Result<(TimeSeriesDataset, Vec<TimeSeriesDataset>), DataError> {
    for o in others {
        if o.channels != train.channels || o.length != train.length {
            return Err(DataError::ShapeMismatch(format!(
                "'{}' is {}x{}, train is {}x{}",
                o.name, o.channels, o.length, train.channels, train.length
            )));
        }
    }
    let norm = Normalizer::fit(train);
    let train_n = norm.apply(train)?;
    let others_n = others.iter().map(|o| norm.apply(o)).collect::<Result<Vec<_>, _>>()?;
    Ok((train_n, others_n))
}
