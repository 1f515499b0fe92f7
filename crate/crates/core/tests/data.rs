mod common;

use std::collections::BTreeSet;
use std::path::Path;

use proptest::prelude::*;
use tsppml_core::data::{
    load_ucr_pair, parse_csv, parse_ts, partition_silos, serialize_ts, split_train_val, znormalize, DataError,
    SplitTag, TimeSeriesDataset,
};

fn ts(body: &str) -> Result<TimeSeriesDataset, DataError> {
    parse_ts(body.as_bytes())
}

#[test]
fn crafted_files() {
    let ok = ts("# comment\n@problemName toy\n@univariate false\n@dimensions 2\n@classLabel true A B\n@data\n1,2:3,4:A\n5,6:7,8:B\n")
        .unwrap();
    assert_eq!((ok.len(), ok.channels, ok.length), (2, 2, 2));
    assert_eq!(ok.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(ok.labels, vec![0, 1]);
    assert_eq!(ok.name, "toy");

    let header = "@problemName toy\n@classLabel true 0 1\n@data\n";
    assert!(matches!(ts(&format!("{header}1,2:0\n1,2,3:0\n")), Err(DataError::RaggedRecord { line: 5, .. })));
    assert!(matches!(ts(&format!("{header}1,2:0\n1,2:3,4:0\n")), Err(DataError::RaggedRecord { .. })));
    assert!(matches!(ts(&format!("{header}1,2:7\n")), Err(DataError::UnknownLabel { .. })));
    assert!(matches!(ts(&format!("{header}1,?:0\n")), Err(DataError::MissingValue { .. })));
    assert!(matches!(ts(&format!("{header}1,x:0\n")), Err(DataError::BadValue { .. })));
    assert!(matches!(ts(header), Err(DataError::NoRecords)));
    assert!(matches!(ts("@problemName toy\n1,2:0\n"), Err(DataError::MalformedHeader { .. })));
    assert!(matches!(parse_ts(&[0xff, 0xfe]), Err(DataError::NotUtf8)));
}

#[test]
fn csv_fallback() {
    let ds = parse_csv(b"1,0.5,0.25\n2,1.5,2.5\n1,3,4\n", "toy").unwrap();
    assert_eq!((ds.len(), ds.channels, ds.length), (3, 1, 2));
    assert_eq!(ds.labels, vec![0, 1, 0]);
}

#[test]
fn bundled_ecg_split() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let (train, test) = load_ucr_pair(&dir, "ECG5000").unwrap();
    assert_eq!((train.len(), test.len()), (500, 4500));
    assert_eq!((train.channels, train.length, train.num_classes()), (1, 140, 5));
    let (tr, val) = split_train_val(&train, 0.1, 0).unwrap();
    assert_eq!((tr.len(), val.len()), (450, 50));
    assert_eq!((tr.split, val.split), (SplitTag::Train, SplitTag::Val));
}

#[test]
fn normalization_ignores_other_sets() {
    let train = common::random_set(12, 2, 10, 3, 1);
    let test = common::random_set(5, 2, 10, 3, 2);
    let mut poisoned = test.clone();
    poisoned.values.iter_mut().for_each(|v| *v = *v * 1e6 + 3e7);
    let (a, _) = znormalize(&train, &[&test]).unwrap();
    let (b, others) = znormalize(&train, &[&poisoned]).unwrap();
    assert_eq!(a, b);
    assert!(others[0].values.iter().all(|v| v.abs() > 1e3));
    for c in 0..2 {
        let vals: Vec<f64> = (0..12).flat_map(|i| a.series(i)[c * 10..(c + 1) * 10].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn split_is_deterministic_and_exact() {
    let ds = common::random_set(40, 1, 8, 4, 3);
    let (a_tr, a_val) = split_train_val(&ds, 0.2, 9).unwrap();
    let (b_tr, b_val) = split_train_val(&ds, 0.2, 9).unwrap();
    assert_eq!((a_tr.clone(), a_val.clone()), (b_tr, b_val));
    assert_eq!(a_val.class_counts(), vec![2, 2, 2, 2]);
    assert_eq!(a_tr.len() + a_val.len(), ds.len());
    assert!(matches!(split_train_val(&ds, 0.5, 0), Err(DataError::InvalidFraction(_))));
}

fn check_partition(ds: &TimeSeriesDataset, n: usize, stratified: bool, seed: u64) {
    let p = partition_silos(ds, n, stratified, seed).unwrap();
    assert_eq!(p.num_clients(), n);
    let mut seen = BTreeSet::new();
    for (idx, silo) in p.indices.iter().zip(&p.silos) {
        for &i in idx {
            assert!(seen.insert(i), "index {i} in two silos");
        }
        assert_eq!(silo, &ds.subset(idx, silo.split));
    }
    assert_eq!(seen, (0..ds.len()).collect());
    let sizes = p.sizes();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    if stratified {
        let global = ds.class_counts();
        for silo in &p.silos {
            for (c, &count) in silo.class_counts().iter().enumerate() {
                let expected = global[c] as f64 / n as f64;
                assert!((count as f64 - expected).abs() <= 1.0, "class {c}: {count} vs {expected}");
            }
        }
    }
    assert_eq!(partition_silos(ds, n, stratified, seed).unwrap().indices, p.indices);
}

#[test]
fn partitions_are_partitions() {
    let ds = common::random_set(37, 1, 4, 3, 4);
    for n in [1, 2, 3, 4, 7, 16, 37] {
        for seed in 0..4 {
            check_partition(&ds, n, true, seed);
            check_partition(&ds, n, false, seed);
        }
    }
    assert!(matches!(partition_silos(&ds, 38, false, 0), Err(DataError::TooManyClients { .. })));
}

fn dataset_strategy() -> impl Strategy<Value = TimeSeriesDataset> {
    (1usize..4, 1usize..12, 2usize..5, 1usize..8).prop_flat_map(|(channels, length, classes, count)| {
        (prop::collection::vec(-1e6f64..1e6, count * channels * length), prop::collection::vec(0..classes, count))
            .prop_map(move |(values, labels)| TimeSeriesDataset {
                name: "prop".into(),
                split: SplitTag::Train,
                channels,
                length,
                values,
                labels,
                label_names: (0..classes).map(|c| format!("L{c}")).collect(),
            })
    })
}

proptest! {
    #[test]
    fn serialize_parse_roundtrip(ds in dataset_strategy()) {
        let back = parse_ts(serialize_ts(&ds).as_bytes()).unwrap();
        prop_assert_eq!(back.values, ds.values);
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.label_names, ds.label_names);
        prop_assert_eq!((back.channels, back.length), (ds.channels, ds.length));
    }
}
