//! Dataset pipeline checks on the bundled 10k-image MNIST fixture.

mod common;

use std::collections::BTreeSet;

use lorafl::data::{
    encode_idx, load_cifar10, load_mnist, parse_idx, partition_iid, read_maybe_gzip, split_train_test,
};
use lorafl::experiment::prepare::prepare_fold;
use lorafl::experiment::RunConfig;
use lorafl::federation::PartitionMode;
use lorafl::Error;

/// χ²₀.₉₉₉ with 9 degrees of freedom.
const CHI2_CRIT_DF9_P001: f64 = 27.877;

#[test]
fn fixture_loads_and_idx_round_trips_bit_exactly() {
    let store = load_mnist(&common::mnist_images(), &common::mnist_labels()).unwrap();
    assert_eq!(store.len(), 10_000);
    assert_eq!((store.height(), store.width(), store.channels()), (28, 28, 1));
    assert!(store.labels().iter().all(|&l| l < 10));

    for path in [common::mnist_images(), common::mnist_labels()] {
        let raw = read_maybe_gzip(&path).unwrap();
        assert_eq!(encode_idx(&parse_idx(&raw).unwrap()), raw);
    }
    assert_eq!(store.to_idx_images(), read_maybe_gzip(&common::mnist_images()).unwrap());
    assert_eq!(store.to_idx_labels(), read_maybe_gzip(&common::mnist_labels()).unwrap());
}

#[test]
fn iid_client_class_histograms_pass_chi_square() {
    let store = load_mnist(&common::mnist_images(), &common::mnist_labels()).unwrap();
    let labels = store.labels();
    let all: Vec<usize> = (0..labels.len()).collect();
    let (train, _) = split_train_test(&all, 0.8, 5).unwrap();
    let mut global = [0f64; 10];
    for &i in &train {
        global[labels[i] as usize] += 1.0;
    }
    for shard in partition_iid(&train, 5, 9).unwrap() {
        let mut obs = [0f64; 10];
        for &i in &shard {
            obs[labels[i] as usize] += 1.0;
        }
        let n = shard.len() as f64;
        let chi2: f64 = (0..10)
            .map(|c| {
                let expected = n * global[c] / train.len() as f64;
                (obs[c] - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < CHI2_CRIT_DF9_P001, "χ² = {chi2}");
    }
}

fn fixture_config() -> RunConfig {
    RunConfig {
        images: Some(common::mnist_images()),
        labels: Some(common::mnist_labels()),
        ..RunConfig::default()
    }
}

#[test]
fn noniid_fold_assigns_consecutive_class_pairs() {
    let store = load_mnist(&common::mnist_images(), &common::mnist_labels()).unwrap();
    let mut cfg = fixture_config();
    cfg.partition = PartitionMode::NonIid;
    let fold = prepare_fold(&cfg, store.labels(), 10, 0).unwrap();
    for (c, shard) in fold.shards.iter().enumerate() {
        let want: BTreeSet<u8> = [2 * c as u8, 2 * c as u8 + 1].into();
        assert_eq!(shard.classes, want);
        assert!(shard.indices.iter().all(|&i| want.contains(&store.labels()[i])));
        assert!(shard.pairs.iter().all(|p| {
            want.contains(&store.labels()[p.idx1]) && want.contains(&store.labels()[p.idx2])
        }));
    }
}

#[test]
fn folds_are_deterministic_and_split_before_pairing() {
    let store = load_mnist(&common::mnist_images(), &common::mnist_labels()).unwrap();
    let cfg = fixture_config();
    let a = prepare_fold(&cfg, store.labels(), 10, 1).unwrap();
    assert_eq!(a, prepare_fold(&cfg, store.labels(), 10, 1).unwrap());
    assert_ne!(a.train, prepare_fold(&cfg, store.labels(), 10, 2).unwrap().train);

    let test: BTreeSet<usize> = a.test.iter().copied().collect();
    for s in &a.shards {
        assert_eq!(s.pair_count(), 5000.min(2 * s.indices.len()));
        for p in &s.pairs {
            assert!(!test.contains(&p.idx1) && !test.contains(&p.idx2));
        }
    }
    assert_eq!(a.test_pairs.len(), 2000);
    assert!(a.test_pairs.iter().all(|p| test.contains(&p.idx1) && test.contains(&p.idx2)));
}

#[test]
fn mnist_file_given_as_cifar_is_a_format_error() {
    match load_cifar10(&[common::mnist_images()]) {
        Err(Error::File { source, .. }) => {
            assert!(matches!(*source, Error::Format(_)));
            assert!(source.to_string().contains("magic"));
        }
        other => panic!("unexpected {other:?}"),
    }
}
