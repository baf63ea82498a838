//! Experiment harness: preparation, federated and centralized rank sweeps,
//! cost reports and plots, all driven by a [`RunConfig`].
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! prepared/                    features, labels, per-fold pairs, manifest
//! metrics_<mode>.csv           one row per (fold, round, k)
//! accuracy_<mode>.svg          fold-mean accuracy per round, one curve per k
//! checkpoints/<mode>_fold<f>_k<k>.lrfl
//! cost.csv, cost.svg
//! ```

pub mod config;
pub mod metrics;
pub mod prepare;
pub mod svg;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{Dataset, FeatureKind, Precision, RunConfig};
pub use metrics::{read_metrics, write_metrics, MetricsRow};
pub use prepare::{load_prepared, prepare, prepared_dir, write_prepared, Prepared, PreparedFold};

use crate::checkpoint::{self, save_checkpoint};
use crate::cost::{self, CostReport, CostSetup, Rank};
use crate::data::read_feature_file;
use crate::error::{Error, Result};
use crate::federation::{run_centralized, run_federated, FedRun, FederatedData};
use crate::head::{DenseHeadParams, SiameseHeadParams};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Federated,
    Central,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Federated => "federated",
            Mode::Central => "central",
        })
    }
}

/// Run `f` on a pool of `threads` workers (0 = rayon's default pool).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::from(e).in_file(p))
}

/// `lorafl prepare`: build features and per-fold shards, return the manifest path.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PathBuf> {
    with_threads(cfg.threads, || {
        let prepared = prepare(cfg)?;
        write_prepared(cfg, &prepared, &prepared_dir(cfg))
    })?
}

/// Seed of the initial global model of one fold.
pub fn init_seed(fold_seed: u64) -> u64 {
    derive_seed(fold_seed, &[stream::INIT])
}

/// Result of one `(fold, k)` cell.
pub struct Cell<T> {
    pub fold: usize,
    pub rank: usize,
    pub run: FedRun<T>,
}

/// Every `(fold, k)` cell of the sweep, in fold-major order. Cells run in
/// parallel; each cell's result depends only on its own seeds.
pub fn run_sweep<T: Scalar>(cfg: &RunConfig, prepared: &Prepared, mode: Mode) -> Result<Vec<Cell<T>>> {
    cfg.validate()?;
    check_prepared(cfg, prepared)?;
    let features: Matrix<T> = prepared.features.cast();
    let cells: Vec<(usize, usize)> = (0..cfg.folds)
        .flat_map(|f| cfg.ranks.iter().map(move |&k| (f, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(f, k)| {
            let fold = &prepared.folds[f];
            let data = FederatedData {
                features: &features,
                shards: &fold.shards,
                test_pairs: &fold.test_pairs,
            };
            let fed = cfg.fed_config(k, fold.seed);
            let run = match mode {
                Mode::Federated => run_federated(&fed, &data, init_seed(fold.seed))?,
                Mode::Central => run_centralized(&fed, &data, init_seed(fold.seed))?,
            };
            Ok(Cell { fold: f, rank: k, run })
        })
        .collect()
}

fn check_prepared(cfg: &RunConfig, prepared: &Prepared) -> Result<()> {
    if prepared.folds.len() < cfg.folds {
        return Err(Error::invalid(format!(
            "{} folds requested but {} prepared",
            cfg.folds,
            prepared.folds.len()
        )));
    }
    for f in &prepared.folds[..cfg.folds] {
        if f.shards.len() != cfg.clients {
            return Err(Error::invalid(format!(
                "fold {} has {} shards but clients = {}",
                f.fold,
                f.shards.len(),
                cfg.clients
            )));
        }
        if f.seed != cfg.fold_seed(f.fold) {
            return Err(Error::invalid(format!("fold {} was prepared with another seed", f.fold)));
        }
    }
    Ok(())
}

pub fn metrics_rows<T>(cfg: &RunConfig, cells: &[Cell<T>], mode: Mode) -> Vec<MetricsRow> {
    cells
        .iter()
        .flat_map(|c| {
            c.run.records.iter().map(move |r| MetricsRow {
                fold: c.fold,
                round: r.round,
                k_or_dense: c.rank.to_string(),
                mode: mode.to_string(),
                train_loss: r.train_loss,
                test_acc: r.test_accuracy,
                test_loss: r.test_loss,
                uplink_bytes: r.uplink_bytes,
                downlink_bytes: r.downlink_bytes,
                flops: r.flops,
                elapsed_ms: if cfg.record_timing { r.elapsed.as_millis() as u64 } else { 0 },
            })
        })
        .collect()
}

pub fn checkpoint_path(cfg: &RunConfig, mode: Mode, fold: usize, rank: usize) -> PathBuf {
    cfg.out_dir
        .join("checkpoints")
        .join(format!("{mode}_fold{fold}_k{rank}.lrfl"))
}

pub fn metrics_path(cfg: &RunConfig, mode: Mode) -> PathBuf {
    cfg.out_dir.join(format!("metrics_{mode}.csv"))
}

pub fn accuracy_svg_path(cfg: &RunConfig, mode: Mode) -> PathBuf {
    cfg.out_dir.join(format!("accuracy_{mode}.svg"))
}

fn accuracy_svg(rows: &[MetricsRow], mode: Mode) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = metrics::mean_accuracy_by_round(rows)
        .into_iter()
        .map(|(k, pts)| (format!("k={k}"), pts.into_iter().map(|(r, a)| (r as f64, a)).collect()))
        .collect();
    svg::line_chart(
        &format!("Test accuracy per round ({mode}, mean over folds)"),
        "global round",
        "pair accuracy",
        &series,
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
}

fn sweep_and_write<T: Scalar>(cfg: &RunConfig, mode: Mode) -> Result<Vec<MetricsRow>> {
    let prepared = load_prepared(cfg, &prepared_dir(cfg))?;
    let cells = run_sweep::<T>(cfg, &prepared, mode)?;
    create_dir(&cfg.out_dir.join("checkpoints"))?;
    for c in &cells {
        save_checkpoint(&c.run.model.params, &checkpoint_path(cfg, mode, c.fold, c.rank))?;
    }
    let rows = metrics_rows(cfg, &cells, mode);
    write_metrics(&metrics_path(cfg, mode), &rows)?;
    write_text(&accuracy_svg_path(cfg, mode), &accuracy_svg(&rows, mode))?;
    Ok(rows)
}

fn run_mode(cfg: &RunConfig, mode: Mode) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    with_threads(cfg.threads, || match cfg.precision {
        Precision::F32 => sweep_and_write::<f32>(cfg, mode),
        Precision::F64 => sweep_and_write::<f64>(cfg, mode),
    })?
}

/// `lorafl federate`: federated rank sweep over every fold.
pub fn cmd_federate(cfg: &RunConfig) -> Result<Vec<MetricsRow>> {
    run_mode(cfg, Mode::Federated)
}

/// `lorafl centralized`: the pooled-data baseline for every fold and rank.
pub fn cmd_centralized(cfg: &RunConfig) -> Result<Vec<MetricsRow>> {
    run_mode(cfg, Mode::Central)
}

/// Feature width implied by the config without loading images.
pub fn feature_dim(cfg: &RunConfig) -> Result<usize> {
    if let Some(d) = cfg.feature_dim {
        return Ok(d);
    }
    match cfg.feature_mode {
        FeatureKind::Flatten => Ok(match cfg.dataset {
            Dataset::Mnist => 28 * 28,
            Dataset::Cifar10 => 32 * 32 * 3,
        }),
        FeatureKind::RandomProjection => Err(Error::invalid("random_projection needs feature_dim")),
        FeatureKind::File => {
            let path = cfg
                .feature_file
                .as_ref()
                .ok_or_else(|| Error::invalid("feature_mode = file needs feature_file"))?;
            Ok(read_feature_file(path)?.cols())
        }
    }
}

/// Cost setup for the config. Each client is assumed to hold the capped
/// pair count `train_pairs_cap`.
pub fn cost_setup(cfg: &RunConfig) -> Result<CostSetup> {
    Ok(CostSetup {
        feature_dim: feature_dim(cfg)?,
        embed_dim: cfg.embed_dim,
        clients_per_round: cfg.clients_per_round,
        rounds: cfg.rounds,
        local_epochs: cfg.local_epochs,
        pairs_per_client: cfg.train_pairs_cap,
        batch_size: cfg.batch_size,
    })
}

/// Weight-section size of a real serialized checkpoint for `rank`.
pub fn serialized_weight_bytes(feature_dim: usize, embed_dim: usize, rank: Rank) -> Result<usize> {
    let bytes = match rank {
        Rank::LowRank(k) => {
            checkpoint::encode_checkpoint(&SiameseHeadParams::<f32>::init(feature_dim, embed_dim, k, 0)?)
        }
        Rank::Dense => {
            checkpoint::encode_dense_checkpoint(&DenseHeadParams::<f32>::init(feature_dim, embed_dim, 0)?)
        }
    };
    Ok(checkpoint::weight_section_len(&bytes))
}

pub const COST_HEADER: &str = "k_or_dense,params,payload_bytes,checkpoint_weight_bytes,round_bytes,run_bytes,flops_per_sample,flops_per_epoch,flops_per_run,adam_flops_per_run,params_ratio_vs_dense,bytes_ratio_vs_dense,flops_ratio_vs_dense,bytes_ratio_vs_reference,flops_ratio_vs_reference";

pub fn encode_cost_csv(reports: &[CostReport], checkpoint_bytes: &[usize]) -> String {
    let mut s = format!("# lorafl cost v1\n{COST_HEADER}\n");
    for (r, cb) in reports.iter().zip(checkpoint_bytes) {
        let _ = writeln!(
            s,
            "{},{},{},{cb},{},{},{},{},{},{},{},{},{},{},{}",
            r.rank,
            r.params,
            r.payload_bytes,
            r.round_bytes,
            r.run_bytes,
            r.flops_per_sample,
            r.flops_per_epoch,
            r.flops_per_run,
            r.adam_flops_per_run,
            r.params_ratio_vs_dense,
            r.bytes_ratio_vs_dense,
            r.flops_ratio_vs_dense,
            r.bytes_ratio_vs_reference,
            r.flops_ratio_vs_reference
        );
    }
    s
}

fn cost_svg(reports: &[CostReport]) -> String {
    let groups: Vec<(String, Vec<f64>)> = reports
        .iter()
        .map(|r| {
            let name = match r.rank {
                Rank::LowRank(k) => format!("k={k}"),
                Rank::Dense => "dense".into(),
            };
            (name, vec![r.flops_per_run as f64, r.run_bytes as f64])
        })
        .collect();
    svg::log_bar_chart(
        "Training compute and communication per run",
        "log10 scale",
        &["training FLOPs", "bytes transferred"],
        &groups,
    )
}

/// `lorafl cost`: cost rows plus the serialized-checkpoint cross-check.
pub fn cmd_cost(cfg: &RunConfig) -> Result<Vec<CostReport>> {
    cfg.validate()?;
    let setup = cost_setup(cfg)?;
    let reports = cost::cost_report(&setup, &cfg.ranks)?;
    let ckpt = reports
        .iter()
        .map(|r| serialized_weight_bytes(setup.feature_dim, setup.embed_dim, r.rank))
        .collect::<Result<Vec<_>>>()?;
    for (r, b) in reports.iter().zip(&ckpt) {
        if r.payload_bytes != *b {
            return Err(Error::invalid(format!(
                "{}: analytic payload {} B but checkpoint weights are {b} B",
                r.rank, r.payload_bytes
            )));
        }
    }
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("cost.csv"), &encode_cost_csv(&reports, &ckpt))?;
    write_text(&cfg.out_dir.join("cost.svg"), &cost_svg(&reports))?;
    Ok(reports)
}

/// `lorafl plot`: redraw every SVG from existing CSVs; returns the files written.
pub fn cmd_plot(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for mode in [Mode::Federated, Mode::Central] {
        let csv = metrics_path(cfg, mode);
        if csv.exists() {
            let rows = read_metrics(&csv)?;
            let out = accuracy_svg_path(cfg, mode);
            write_text(&out, &accuracy_svg(&rows, mode))?;
            written.push(out);
        }
    }
    if cfg.out_dir.join("cost.csv").exists() {
        let reports = cost::cost_report(&cost_setup(cfg)?, &cfg.ranks)?;
        let out = cfg.out_dir.join("cost.svg");
        write_text(&out, &cost_svg(&reports))?;
        written.push(out);
    }
    if written.is_empty() {
        return Err(Error::invalid(format!("nothing to plot in {}", cfg.out_dir.display())));
    }
    Ok(written)
}
