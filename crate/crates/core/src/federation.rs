//! Simulated federated rounds over the six low-rank factors.
//!
//! Each round the server samples `K` of `C` clients, every selected client
//! trains a copy of the global head on its own pairs, and the server replaces
//! the global factors with the pair-count-weighted mean of the returned
//! factors. `A` and `B` are averaged separately; the products `A·B` are never
//! averaged. Client training runs in parallel while the reduction always
//! accumulates in ascending client-id order, so a run is bit-reproducible at
//! any thread count.

use std::time::{Duration, Instant};

use rand::seq::index;
use rayon::prelude::*;

use crate::cost::{self, Rank};
use crate::data::{ClientShard, PairExample};
use crate::error::{Error, Result};
use crate::head::{SiameseHeadParams, DEFAULT_EMBED_DIM};
use crate::lowrank::ParamCount;
use crate::matrix::Matrix;
use crate::rng::{client_round_seed, derive_seed, rng_from, stream};
use crate::scalar::Scalar;
use crate::training::{evaluate, train_local, LocalConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    NonIid,
}

impl std::fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PartitionMode::Iid => "iid",
            PartitionMode::NonIid => "noniid",
        })
    }
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionMode::Iid),
            "noniid" | "non-iid" => Ok(PartitionMode::NonIid),
            other => Err(Error::invalid(format!("unknown partition mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local: LocalConfig,
    pub rank: usize,
    pub embed_dim: usize,
    pub partition: PartitionMode,
    pub global_seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 5,
            clients_per_round: 3,
            rounds: 10,
            local: LocalConfig::default(),
            rank: 8,
            embed_dim: DEFAULT_EMBED_DIM,
            partition: PartitionMode::Iid,
            global_seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::invalid(format!(
                "need 1 <= K <= C, got K={} C={}",
                self.clients_per_round, self.num_clients
            )));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.embed_dim == 0 || self.local.batch_size == 0 {
            return Err(Error::invalid("embed_dim and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Uniform sample of `k` distinct client ids out of `c`, ascending.
pub fn sample_clients(c: usize, k: usize, round: usize, global_seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > c {
        return Err(Error::invalid(format!("cannot select {k} of {c} clients")));
    }
    let mut rng = rng_from(derive_seed(global_seed, &[stream::SAMPLE, round as u64]));
    let mut ids = index::sample(&mut rng, c, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Parameters returned by one client and their aggregation weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub params: SiameseHeadParams<T>,
    pub weight: f64,
}

/// FederatedAveraging: entrywise `Σ wᵢ·Mᵢ / Σ wᵢ` for each factor.
///
/// Accumulates in `f64` in ascending client-id order regardless of the
/// order of `updates`, then rounds to the storage type.
pub fn aggregate<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<SiameseHeadParams<T>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::invalid("no client updates to aggregate"))?;
    if let Some(u) = updates.iter().find(|u| !(u.weight > 0.0 && u.weight.is_finite())) {
        return Err(Error::invalid(format!(
            "client {} has non-positive weight {}",
            u.client_id, u.weight
        )));
    }
    let shapes = first.params.factors().map(|m| m.shape());
    for u in updates {
        if u.params.factors().map(|m| m.shape()) != shapes {
            return Err(Error::dim(
                "aggregate",
                format!("client {} factor shapes differ", u.client_id),
            ));
        }
    }
    // (w·x)/w need not round-trip in f64, so the fixed point is explicit
    if updates.len() == 1 {
        return Ok(first.params.clone());
    }

    let mut order: Vec<&ClientUpdate<T>> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let total: f64 = order.iter().map(|u| u.weight).sum();
    let mut sums: Vec<Vec<f64>> = shapes.iter().map(|&(r, c)| vec![0.0; r * c]).collect();
    for u in &order {
        for (acc, m) in sums.iter_mut().zip(u.params.factors()) {
            for (a, v) in acc.iter_mut().zip(m.as_slice()) {
                *a += u.weight * v.to_f64();
            }
        }
    }
    let mut it = sums.into_iter().zip(shapes).map(|(s, (r, c))| {
        Matrix::from_vec(r, c, s.into_iter().map(|v| T::from_f64(v / total)).collect())
    });
    let factors: [Matrix<T>; 6] = std::array::from_fn(|_| it.next().unwrap().unwrap());
    SiameseHeadParams::from_factors(factors)
}

/// Weighted mean of the materialized products `AᵢBᵢ` for the three layers.
///
/// Diagnostic only: this is what averaging full weights would give, which
/// differs from averaging the factors.
pub fn aggregate_products<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<[Matrix<f64>; 3]> {
    if updates.is_empty() {
        return Err(Error::invalid("no client updates to aggregate"));
    }
    let total: f64 = updates.iter().map(|u| u.weight).sum();
    let mut out: Option<[Matrix<f64>; 3]> = None;
    let mut order: Vec<&ClientUpdate<T>> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    for u in order {
        let p = &u.params;
        let w = [
            p.fc_lora_1().materialize(),
            p.fc_lora_2().materialize(),
            p.similarity_lora().materialize(),
        ]
        .map(|m| m.cast::<f64>().scale(u.weight / total));
        out = Some(match out {
            None => w,
            Some(acc) => {
                let mut it = acc.into_iter().zip(w).map(|(a, b)| a.zip_map(&b, |x, y| x + y));
                let merged: [Matrix<f64>; 3] = std::array::from_fn(|_| it.next().unwrap().unwrap());
                merged
            }
        });
    }
    Ok(out.expect("non-empty"))
}

/// Client shards plus the server's held-out pairs, over one frozen feature
/// table.
#[derive(Clone, Copy, Debug)]
pub struct FederatedData<'a, T> {
    pub features: &'a Matrix<T>,
    pub shards: &'a [ClientShard],
    pub test_pairs: &'a [PairExample],
}

impl<T: Scalar> FederatedData<'_, T> {
    fn check(&self, cfg: &FedConfig) -> Result<()> {
        if self.shards.len() != cfg.num_clients {
            return Err(Error::invalid(format!(
                "{} shards prepared for {} clients",
                self.shards.len(),
                cfg.num_clients
            )));
        }
        for (i, s) in self.shards.iter().enumerate() {
            if s.client_id != i {
                return Err(Error::invalid(format!("shard {i} has client id {}", s.client_id)));
            }
            if s.pairs.is_empty() {
                return Err(Error::invalid(format!("client {i} has no training pairs")));
            }
        }
        if self.test_pairs.is_empty() {
            return Err(Error::invalid("global test set is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub selected: Vec<usize>,
    /// Training pairs of each selected client, same order as `selected`.
    pub sample_counts: Vec<usize>,
    /// Pair-weighted mean of the clients' last-epoch losses.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
    pub flops: u64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalModel<T> {
    pub params: SiameseHeadParams<T>,
    /// Rounds completed.
    pub round: usize,
}

#[derive(Clone, Debug)]
pub struct FedRun<T> {
    pub records: Vec<RoundRecord>,
    pub model: GlobalModel<T>,
}

/// Local training of the given clients from the same global parameters.
///
/// Results come back in the order of `clients`; each client's randomness
/// depends only on `(global_seed, round, client)`.
pub fn train_clients<T: Scalar>(
    cfg: &FedConfig,
    data: &FederatedData<'_, T>,
    global: &SiameseHeadParams<T>,
    round: usize,
    clients: &[usize],
) -> Result<Vec<(ClientUpdate<T>, f64)>> {
    clients
        .par_iter()
        .map(|&c| {
            let shard = &data.shards[c];
            let seed = client_round_seed(cfg.global_seed, round, c);
            let (params, stats) = train_local(global, data.features, &shard.pairs, &cfg.local, seed)?;
            let update = ClientUpdate {
                client_id: c,
                params,
                weight: shard.pair_count() as f64,
            };
            Ok((update, stats.final_loss().unwrap_or(f64::NAN)))
        })
        .collect()
}

fn weighted_loss<T>(results: &[(ClientUpdate<T>, f64)]) -> f64 {
    let total: f64 = results.iter().map(|(u, _)| u.weight).sum();
    results.iter().map(|(u, l)| u.weight * l).sum::<f64>() / total
}

/// Full federated run starting from `SiameseHeadParams::init(F, E, k, init_seed)`.
pub fn run_federated<T: Scalar>(
    cfg: &FedConfig,
    data: &FederatedData<'_, T>,
    init_seed: u64,
) -> Result<FedRun<T>> {
    cfg.validate()?;
    data.check(cfg)?;
    let initial = SiameseHeadParams::init(data.features.cols(), cfg.embed_dim, cfg.rank, init_seed)?;
    let payload = cost::payload_bytes(initial.param_count());
    let mut global = GlobalModel {
        params: initial,
        round: 0,
    };
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let selected = sample_clients(cfg.num_clients, cfg.clients_per_round, round, cfg.global_seed)?;
        let results = train_clients(cfg, data, &global.params, round, &selected)?;
        let train_loss = weighted_loss(&results);
        let updates: Vec<ClientUpdate<T>> = results.into_iter().map(|(u, _)| u).collect();
        global.params = aggregate(&updates)?;
        global.round = round;
        let eval = evaluate(&global.params, data.features, data.test_pairs)?;

        let sample_counts: Vec<usize> = selected.iter().map(|&c| data.shards[c].pair_count()).collect();
        let pairs_trained: usize = sample_counts.iter().sum();
        records.push(RoundRecord {
            round,
            sample_counts,
            train_loss,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            uplink_bytes: selected.len() * payload,
            downlink_bytes: selected.len() * payload,
            flops: cost::training_flops(
                data.features.cols(),
                cfg.embed_dim,
                Rank::LowRank(cfg.rank),
                pairs_trained,
                cfg.local.epochs,
            ),
            elapsed: start.elapsed(),
            selected,
        });
    }
    Ok(FedRun {
        records,
        model: global,
    })
}

/// Single-model baseline: the union of every client's pairs trained for
/// `rounds` calls of `local_epochs` epochs each, with the Adam reset and
/// seed schedule of client 0 in a `C = K = 1` federation. Evaluated after
/// every round; no communication is counted.
pub fn run_centralized<T: Scalar>(
    cfg: &FedConfig,
    data: &FederatedData<'_, T>,
    init_seed: u64,
) -> Result<FedRun<T>> {
    cfg.validate()?;
    data.check(cfg)?;
    let pairs: Vec<PairExample> = data.shards.iter().flat_map(|s| s.pairs.iter().copied()).collect();
    let mut global = GlobalModel {
        params: SiameseHeadParams::init(data.features.cols(), cfg.embed_dim, cfg.rank, init_seed)?,
        round: 0,
    };
    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let seed = client_round_seed(cfg.global_seed, round, 0);
        let (params, stats) = train_local(&global.params, data.features, &pairs, &cfg.local, seed)?;
        global.params = params;
        global.round = round;
        let eval = evaluate(&global.params, data.features, data.test_pairs)?;
        records.push(RoundRecord {
            round,
            selected: (0..data.shards.len()).collect(),
            sample_counts: vec![pairs.len()],
            train_loss: stats.final_loss().unwrap_or(f64::NAN),
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            uplink_bytes: 0,
            downlink_bytes: 0,
            flops: cost::training_flops(
                data.features.cols(),
                cfg.embed_dim,
                Rank::LowRank(cfg.rank),
                pairs.len(),
                cfg.local.epochs,
            ),
            elapsed: start.elapsed(),
        });
    }
    Ok(FedRun {
        records,
        model: global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> SiameseHeadParams<f64> {
        let f = [(1, 1), (1, 1), (1, 1), (1, 1), (1, 1), (1, 1)].map(|(r, c)| Matrix::filled(r, c, v));
        SiameseHeadParams::from_factors(f).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_complete_when_k_equals_c() {
        assert_eq!(sample_clients(5, 5, 3, 9).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_clients(5, 3, 2, 9).unwrap(), sample_clients(5, 3, 2, 9).unwrap());
        assert!(sample_clients(3, 4, 0, 0).is_err());
        assert!(sample_clients(3, 0, 0, 0).is_err());
    }

    #[test]
    fn single_client_sampling_is_uniform() {
        let mut counts = [0usize; 5];
        for r in 0..10_000 {
            counts[sample_clients(5, 1, r, 17).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((1850..=2150).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn weighted_mean() {
        let ups: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| ClientUpdate {
                client_id: i,
                params: scalar_params(v),
                weight: v,
            })
            .collect();
        let agg = aggregate(&ups).unwrap();
        for m in agg.factors() {
            assert_eq!(m.get(0, 0), 14.0 / 6.0);
        }
    }

    #[test]
    fn cancellation_and_fixed_point() {
        let p = SiameseHeadParams::<f32>::init(6, 4, 2, 3).unwrap();
        let neg = SiameseHeadParams::from_factors(p.factors().map(|m| m.map(|v| -v))).unwrap();
        let agg = aggregate(&[
            ClientUpdate { client_id: 0, params: p.clone(), weight: 5.0 },
            ClientUpdate { client_id: 1, params: neg, weight: 5.0 },
        ])
        .unwrap();
        assert!(agg.factors().iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
        let single = aggregate(&[ClientUpdate { client_id: 4, params: p.clone(), weight: 3.0 }]).unwrap();
        assert_eq!(single, p);
    }

    #[test]
    fn aggregation_ignores_input_order() {
        let ups: Vec<_> = (0..4)
            .map(|i| ClientUpdate {
                client_id: i,
                params: SiameseHeadParams::<f32>::init(6, 4, 2, i as u64).unwrap(),
                weight: (i + 1) as f64 * 7.0,
            })
            .collect();
        let mut rev = ups.clone();
        rev.reverse();
        assert_eq!(aggregate(&ups).unwrap(), aggregate(&rev).unwrap());
    }

    #[test]
    fn aggregation_errors() {
        assert!(aggregate::<f32>(&[]).is_err());
        let a = SiameseHeadParams::<f32>::init(6, 4, 2, 0).unwrap();
        let b = SiameseHeadParams::<f32>::init(6, 4, 3, 0).unwrap();
        let res = aggregate(&[
            ClientUpdate { client_id: 0, params: a.clone(), weight: 1.0 },
            ClientUpdate { client_id: 1, params: b, weight: 1.0 },
        ]);
        assert!(matches!(res, Err(Error::Dimension { .. })));
        let res = aggregate(&[ClientUpdate { client_id: 0, params: a, weight: 0.0 }]);
        assert!(res.is_err());
    }

    #[test]
    fn product_mean_differs_from_factor_mean() {
        let ups: Vec<_> = (0..2)
            .map(|i| ClientUpdate {
                client_id: i,
                params: SiameseHeadParams::<f64>::init(5, 3, 2, 10 + i as u64).unwrap(),
                weight: 1.0,
            })
            .collect();
        let products = aggregate_products(&ups).unwrap();
        let factored = aggregate(&ups).unwrap().fc_lora_1().materialize();
        assert!(products[0].zip_map(&factored, |a, b| (a - b).abs()).unwrap().max_abs() > 1e-6);
    }
}
