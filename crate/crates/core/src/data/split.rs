use rand::seq::SliceRandom;

use super::{DataError, SplitTag, TimeSeriesDataset};
use crate::nn::rng_from_seed;

/// Stratified hold-out split. Per-class validation quotas use the largest
/// remainder method so the total is `round(fraction * n)`. Both parts keep
/// the original sample order.
pub fn split_train_val(
    train: &TimeSeriesDataset,
    fraction: f64,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset), DataError> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let by_class = train.indices_by_class();
    for (class, idx) in by_class.iter().enumerate() {
        if !idx.is_empty() && idx.len() < 2 {
            return Err(DataError::ClassTooSmall { class, count: idx.len() });
        }
    }
    let n = train.len();
    let total = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|idx| fraction * idx.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    // largest remainder first, ties to the lower class index
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] + 1 < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut val_idx = Vec::with_capacity(total);
    for (idx, &q) in by_class.iter().zip(&quota) {
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        val_idx.extend_from_slice(&shuffled[..q]);
    }
    val_idx.sort_unstable();
    let mut is_val = vec![false; n];
    for &i in &val_idx {
        is_val[i] = true;
    }
    let train_idx: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
    Ok((train.subset(&train_idx, SplitTag::Train), train.subset(&val_idx, SplitTag::Val)))
}

/// Client data silos cut from one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SiloPartition {
    pub silos: Vec<TimeSeriesDataset>,
    /// Source indices of each silo, ascending.
    pub indices: Vec<Vec<usize>>,
    pub stratified: bool,
    pub seed: u64,
}

impl SiloPartition {
    pub fn num_clients(&self) -> usize {
        self.silos.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.silos.iter().map(TimeSeriesDataset::len).collect()
    }
}

/// Splits `train` into `clients` disjoint silos whose sizes differ by at most
/// one. Stratified partitions deal each class round-robin, continuing the
/// rotation across classes, so per-class counts differ by at most one too.
pub fn partition_silos(
    train: &TimeSeriesDataset,
    clients: usize,
    stratified: bool,
    seed: u64,
) -> Result<SiloPartition, DataError> {
    let n = train.len();
    if clients == 0 || clients > n {
        return Err(DataError::TooManyClients { clients, count: n });
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); clients];
    if stratified {
        let mut next = 0;
        for idx in train.indices_by_class() {
            let mut shuffled = idx;
            shuffled.shuffle(&mut rng);
            for i in shuffled {
                assignment[next].push(i);
                next = (next + 1) % clients;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let (base, extra) = (n / clients, n % clients);
        let mut start = 0;
        for (c, silo) in assignment.iter_mut().enumerate() {
            let size = base + usize::from(c < extra);
            silo.extend_from_slice(&all[start..start + size]);
            start += size;
        }
    }
    for a in &mut assignment {
        a.sort_unstable();
    }
    let silos = assignment.iter().map(|idx| train.subset(idx, SplitTag::Train)).collect();
    Ok(SiloPartition { silos, indices: assignment, stratified, seed })
}
