//! Property tests for parameter counts, Adam, pairs, partitions, parsers,
//! checkpoints and aggregation.

use std::collections::BTreeSet;

use lorafl::checkpoint::{decode_checkpoint, encode_checkpoint, HEADER_LEN};
use lorafl::cost::{head_param_count, payload_bytes};
use lorafl::data::{
    build_pairs, encode_idx, parse_cifar10_bin, parse_idx, partition_iid, partition_noniid,
    ImageStore, IdxTensor,
};
use lorafl::federation::{aggregate, ClientUpdate};
use lorafl::lowrank::LoRaLayer;
use lorafl::training::{adam_update_slice, AdamCoefficients, AdamConfig};
use lorafl::{Matrix, SiameseHeadParams};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn param_count_is_linear_in_rank(f in 1usize..2000, e in 1usize..300, k1 in 1usize..40, k2 in 1usize..40) {
        prop_assert_eq!(head_param_count(f, e, k1 + k2), head_param_count(f, e, k1) + head_param_count(f, e, k2));
        prop_assert_eq!(head_param_count(f, e, 4 * k1), 4 * head_param_count(f, e, k1));
    }

    #[test]
    fn adam_is_invariant_to_flattening(
        w in prop::collection::vec(-2.0f64..2.0, 2..40),
        g in prop::collection::vec(-2.0f64..2.0, 40),
        split in 1usize..39,
        t in 1u64..50,
    ) {
        let n = w.len();
        let split = split.min(n - 1);
        let g = &g[..n];
        let c = AdamCoefficients::<f64>::for_step(&AdamConfig::default(), t);
        let m0: Vec<f64> = g.iter().map(|v| 0.1 * v).collect();
        let v0: Vec<f64> = g.iter().map(|v| 0.01 * v * v).collect();

        let (mut wa, mut ma, mut va) = (w.clone(), m0.clone(), v0.clone());
        adam_update_slice(&mut wa, g, &mut ma, &mut va, &c);

        let (mut wb, mut mb, mut vb) = (w.clone(), m0, v0);
        let (w1, w2) = wb.split_at_mut(split);
        let (m1, m2) = mb.split_at_mut(split);
        let (v1, v2) = vb.split_at_mut(split);
        adam_update_slice(w1, &g[..split], m1, v1, &c);
        adam_update_slice(w2, &g[split..], m2, v2, &c);
        prop_assert_eq!(wa, wb);
        prop_assert_eq!(ma, mb);
        prop_assert_eq!(va, vb);
    }

    #[test]
    fn pairs_are_balanced_and_labelled_correctly(
        labels in prop::collection::vec(0u8..4, 6..60),
        n in 0usize..200,
        seed in any::<u64>(),
    ) {
        let idx: Vec<usize> = (0..labels.len()).collect();
        let classes: BTreeSet<u8> = labels.iter().copied().collect();
        let has_positive = {
            let mut counts = [0usize; 4];
            for &l in &labels { counts[l as usize] += 1; }
            counts.iter().any(|&c| c >= 2)
        };
        prop_assume!(classes.len() >= 2 && has_positive);
        let pairs = build_pairs(&labels, &idx, n, seed).unwrap();
        prop_assert_eq!(pairs.len(), n);
        let pos = pairs.iter().filter(|p| p.label == 1).count();
        prop_assert!(pos.abs_diff(n - pos) <= 1);
        for p in &pairs {
            prop_assert!(p.idx1 != p.idx2);
            prop_assert_eq!(p.label == 1, labels[p.idx1] == labels[p.idx2]);
        }
    }

    #[test]
    fn partitions_are_disjoint_and_covering(
        labels in prop::collection::vec(0u8..10, 20..300),
        clients in 1usize..6,
        seed in any::<u64>(),
    ) {
        let idx: Vec<usize> = (0..labels.len()).collect();
        let iid = partition_iid(&idx, clients, seed).unwrap();
        let mut all = iid.concat();
        all.sort_unstable();
        prop_assert_eq!(&all, &idx);
        let max = iid.iter().map(Vec::len).max().unwrap();
        let min = iid.iter().map(Vec::len).min().unwrap();
        prop_assert!(max - min <= 1);

        let non = partition_noniid(&labels, &idx, 10, clients).unwrap();
        let mut all: Vec<usize> = non.iter().flat_map(|(s, _)| s.iter().copied()).collect();
        all.sort_unstable();
        prop_assert_eq!(&all, &idx);
        let mut seen = BTreeSet::new();
        for (shard, classes) in &non {
            for c in classes { prop_assert!(seen.insert(*c)); }
            for &i in shard { prop_assert!(classes.contains(&labels[i])); }
        }
        prop_assert_eq!(seen.len(), 10);
    }

    #[test]
    fn idx_round_trip(n in 1usize..6, h in 1usize..5, w in 1usize..5, seed in any::<u8>()) {
        let data: Vec<u8> = (0..n * h * w).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let t = IdxTensor { dims: vec![n, h, w], data };
        let bytes = encode_idx(&t);
        prop_assert_eq!(parse_idx(&bytes).unwrap(), t.clone());
        prop_assert_eq!(encode_idx(&parse_idx(&bytes).unwrap()), bytes);
        let labels = IdxTensor { dims: vec![n], data: t.data[..n].to_vec() };
        prop_assert_eq!(parse_idx(&encode_idx(&labels)).unwrap(), labels);
    }

    #[test]
    fn cifar_round_trip(n in 1usize..4, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..n * 3072).map(|i| (i as u8) ^ seed).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let store = ImageStore::new(32, 32, 3, 10, pixels, labels).unwrap();
        let bytes = store.to_cifar10_bin();
        prop_assert_eq!(bytes.len(), n * 3073);
        let back = parse_cifar10_bin(&bytes).unwrap();
        prop_assert_eq!(back.to_cifar10_bin(), bytes);
        prop_assert_eq!(back, store);
    }

    #[test]
    fn checkpoint_round_trip_and_size(f in 1usize..40, e in 1usize..20, k in 1usize..8, seed in any::<u64>()) {
        let p = SiameseHeadParams::<f32>::init(f, e, k, seed).unwrap();
        let bytes = encode_checkpoint(&p);
        prop_assert_eq!(bytes.len() - HEADER_LEN, payload_bytes(head_param_count(f, e, k)));
        prop_assert_eq!(decode_checkpoint::<f32>(&bytes).unwrap(), p);
    }

    #[test]
    fn aggregate_matches_weighted_mean_oracle(
        clients in 1usize..=10,
        weights in prop::collection::vec(1u32..5000, 10),
        seed in any::<u64>(),
    ) {
        let (f, e, k) = (4, 3, 2);
        let updates: Vec<ClientUpdate<f64>> = (0..clients)
            .map(|c| ClientUpdate {
                client_id: c,
                params: SiameseHeadParams::init(f, e, k, seed.wrapping_add(c as u64)).unwrap(),
                weight: f64::from(weights[c]),
            })
            .collect();
        let mut shuffled = updates.clone();
        shuffled.reverse();
        let got = aggregate(&shuffled).unwrap();

        let total: f64 = updates.iter().map(|u| u.weight).sum();
        for (which, m) in got.factors().into_iter().enumerate() {
            for idx in 0..m.len() {
                let want = if clients == 1 {
                    updates[0].params.factors()[which].as_slice()[idx]
                } else {
                    let mut acc = 0.0f64;
                    for u in &updates {
                        acc += u.weight * u.params.factors()[which].as_slice()[idx];
                    }
                    acc / total
                };
                prop_assert_eq!(m.as_slice()[idx].to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn factored_forward_equals_materialized_on_integer_data(
        n in 1usize..5, nin in 1usize..8, nout in 1usize..8, k in 1usize..5,
        vals in prop::collection::vec(-4i32..5, 200),
    ) {
        let mut it = vals.iter().cycle().map(|&v| f64::from(v));
        let a = Matrix::from_fn(nin, k, |_, _| it.next().unwrap());
        let b = Matrix::from_fn(k, nout, |_, _| it.next().unwrap());
        let x = Matrix::from_fn(n, nin, |_, _| it.next().unwrap());
        let layer = LoRaLayer::new(a, b).unwrap();
        let factored = layer.forward(&x).unwrap();
        let materialized = x.matmul(&layer.materialize()).unwrap();
        prop_assert_eq!(factored, materialized);
    }
}

#[test]
fn seven_thirds_case() {
    let scalar = |v: f64| {
        SiameseHeadParams::from_factors([(1, 1), (1, 1), (1, 1), (1, 1), (1, 1), (1, 1)].map(|(r, c)| Matrix::filled(r, c, v)))
            .unwrap()
    };
    let updates: Vec<ClientUpdate<f64>> = (1..=3)
        .map(|i| ClientUpdate { client_id: i, params: scalar(i as f64), weight: i as f64 })
        .collect();
    let avg = aggregate(&updates).unwrap();
    for m in avg.factors() {
        assert_eq!(m.as_slice()[0], 7.0 / 3.0);
    }
}
