#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsppml_core::data::{SplitTag, TimeSeriesDataset};

/// Two-class set where the label is the sign of the series mean.
pub fn sign_of_mean(count: usize, length: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(count * length);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let offset = if label == 1 { 1.0 } else { -1.0 };
        values.extend((0..length).map(|_| offset + rng.random_range(-0.5..0.5)));
        labels.push(label);
    }
    TimeSeriesDataset {
        name: "sign".into(),
        split: SplitTag::Train,
        channels: 1,
        length,
        values,
        labels,
        label_names: vec!["neg".into(), "pos".into()],
    }
}

/// Random multi-class data with `classes` labels dealt round-robin.
pub fn random_set(count: usize, channels: usize, length: usize, classes: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimeSeriesDataset {
        name: "random".into(),
        split: SplitTag::Train,
        channels,
        length,
        values: (0..count * channels * length).map(|_| rng.random_range(-2.0..2.0)).collect(),
        labels: (0..count).map(|i| i % classes).collect(),
        label_names: (0..classes).map(|c| format!("c{c}")).collect(),
    }
}
