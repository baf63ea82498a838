//! End-to-end federation properties on small synthetic problems.

mod common;

use lorafl::data::{build_pairs, extract_features, partition_iid, ClientShard, FeatureMode};
use lorafl::experiment::with_threads;
use lorafl::federation::{run_centralized, run_federated, FedConfig, FederatedData};
use lorafl::training::{AdamConfig, LocalConfig};
use lorafl::Matrix;

struct Problem {
    features: Matrix<f64>,
    shards: Vec<ClientShard>,
    test_pairs: Vec<lorafl::data::PairExample>,
}

fn problem(clients: usize) -> Problem {
    let store = common::synthetic_images(240, 4, 1, 4, 7);
    let features = extract_features::<f64>(&store, &FeatureMode::Flatten).unwrap().matrix().clone();
    let labels = store.labels();
    let train: Vec<usize> = (0..200).collect();
    let test: Vec<usize> = (200..240).collect();
    let shards = partition_iid(&train, clients, 3)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(c, indices)| ClientShard {
            client_id: c,
            pairs: build_pairs(labels, &indices, 40 + 10 * c, c as u64).unwrap(),
            classes: indices.iter().map(|&i| labels[i]).collect(),
            indices,
        })
        .collect();
    Problem {
        features,
        test_pairs: build_pairs(labels, &test, 60, 99).unwrap(),
        shards,
    }
}

fn config(clients: usize, per_round: usize) -> FedConfig {
    FedConfig {
        num_clients: clients,
        clients_per_round: per_round,
        rounds: 3,
        local: LocalConfig {
            epochs: 2,
            batch_size: 8,
            adam: AdamConfig::default(),
        },
        rank: 2,
        embed_dim: 6,
        global_seed: 42,
        ..FedConfig::default()
    }
}

#[test]
fn single_client_federation_equals_centralized_training() {
    let p = problem(1);
    let data = FederatedData {
        features: &p.features,
        shards: &p.shards,
        test_pairs: &p.test_pairs,
    };
    let cfg = config(1, 1);
    let fed = run_federated(&cfg, &data, 5).unwrap();
    let cen = run_centralized(&cfg, &data, 5).unwrap();
    assert_eq!(fed.model, cen.model);
    for (a, b) in fed.records.iter().zip(&cen.records) {
        assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
        assert_eq!(a.test_loss.to_bits(), b.test_loss.to_bits());
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
}

#[test]
fn federated_run_is_independent_of_thread_count() {
    let p = problem(4);
    let data = FederatedData {
        features: &p.features,
        shards: &p.shards,
        test_pairs: &p.test_pairs,
    };
    let cfg = config(4, 3);
    let one = with_threads(1, || run_federated(&cfg, &data, 1).unwrap()).unwrap();
    let four = with_threads(4, || run_federated(&cfg, &data, 1).unwrap()).unwrap();
    assert_eq!(one.model, four.model);
    let strip = |r: &lorafl::federation::RoundRecord| (r.selected.clone(), r.test_accuracy.to_bits(), r.flops);
    assert_eq!(
        one.records.iter().map(strip).collect::<Vec<_>>(),
        four.records.iter().map(strip).collect::<Vec<_>>()
    );
}

#[test]
fn round_records_match_cost_model() {
    let p = problem(4);
    let data = FederatedData {
        features: &p.features,
        shards: &p.shards,
        test_pairs: &p.test_pairs,
    };
    let cfg = config(4, 2);
    let run = run_federated(&cfg, &data, 1).unwrap();
    let payload = 4 * lorafl::cost::head_param_count(16, 6, 2);
    for r in &run.records {
        assert_eq!(r.selected.len(), 2);
        assert_eq!(r.uplink_bytes + r.downlink_bytes, lorafl::cost::round_bytes(2, payload));
        let pairs: usize = r.selected.iter().map(|&c| p.shards[c].pair_count()).sum();
        assert_eq!(r.flops, 3 * lorafl::cost::forward_flops(16, 6, lorafl::cost::Rank::LowRank(2)) * pairs as u64 * 2);
        assert!((0.0..=1.0).contains(&r.test_accuracy));
    }
}
