//! `key = value` run configuration.
//!
//! Every key maps to one [`RunConfig`] field. Unknown keys are errors, `#`
//! starts a comment, and later assignments override earlier ones, which is
//! how `--set key=value` overrides are applied on top of a file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::FeatureMode;
use crate::error::{Error, Result};
use crate::federation::{FedConfig, PartitionMode};
use crate::head::DEFAULT_EMBED_DIM;
use crate::training::{AdamConfig, LocalConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Mnist,
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Flatten,
    RandomProjection,
    File,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Dataset,
    /// MNIST image IDX file (plain or gzip).
    pub images: Option<PathBuf>,
    /// MNIST label IDX file.
    pub labels: Option<PathBuf>,
    /// CIFAR-10 binary batch files.
    pub cifar_batches: Vec<PathBuf>,
    /// Use only the first N images of the dataset.
    pub max_images: Option<usize>,
    pub feature_mode: FeatureKind,
    /// Projection width, or the expected feature width for the other modes.
    pub feature_dim: Option<usize>,
    pub feature_seed: u64,
    pub feature_file: Option<PathBuf>,
    pub embed_dim: usize,
    pub partition: PartitionMode,
    pub clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ranks: Vec<usize>,
    pub folds: usize,
    pub train_ratio: f64,
    /// Per-client training pairs are `min(train_pairs_cap, 2·|shard|)`.
    pub train_pairs_cap: usize,
    pub test_pairs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Write wall-clock times into the metrics CSV (breaks byte-identical
    /// reruns, so off by default).
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::Mnist,
            images: None,
            labels: None,
            cifar_batches: Vec::new(),
            max_images: None,
            feature_mode: FeatureKind::Flatten,
            feature_dim: None,
            feature_seed: 0,
            feature_file: None,
            embed_dim: DEFAULT_EMBED_DIM,
            partition: PartitionMode::Iid,
            clients: 5,
            clients_per_round: 3,
            rounds: 10,
            local_epochs: 5,
            batch_size: 32,
            lr: 1e-3,
            ranks: vec![1, 2, 4, 8, 16, 32],
            folds: 5,
            train_ratio: 0.8,
            train_pairs_cap: 5000,
            test_pairs: 2000,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            precision: Precision::F32,
            threads: 0,
            record_timing: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("bad boolean {value:?} for key {key}"))),
    }
}

fn opt_path(value: &str, base: Option<&Path>) -> Option<PathBuf> {
    if value.is_empty() {
        return None;
    }
    let p = PathBuf::from(value);
    Some(match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Apply one assignment. Relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dataset" => {
                self.dataset = match value {
                    "mnist" => Dataset::Mnist,
                    "cifar10" => Dataset::Cifar10,
                    _ => return Err(Error::invalid(format!("unknown dataset {value:?}"))),
                }
            }
            "images" => self.images = opt_path(value, base),
            "labels" => self.labels = opt_path(value, base),
            "cifar_batches" => {
                self.cifar_batches = value
                    .split(',')
                    .filter_map(|p| opt_path(p.trim(), base))
                    .collect()
            }
            "max_images" => {
                self.max_images = if value.is_empty() || value == "all" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "feature_mode" => {
                self.feature_mode = match value {
                    "flatten" => FeatureKind::Flatten,
                    "random_projection" => FeatureKind::RandomProjection,
                    "file" => FeatureKind::File,
                    _ => return Err(Error::invalid(format!("unknown feature mode {value:?}"))),
                }
            }
            "feature_dim" => {
                self.feature_dim = if value.is_empty() { None } else { Some(parse(key, value)?) }
            }
            "feature_seed" => self.feature_seed = parse(key, value)?,
            "feature_file" => self.feature_file = opt_path(value, base),
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "partition" => self.partition = value.parse()?,
            "clients" => self.clients = parse(key, value)?,
            "clients_per_round" => self.clients_per_round = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "ranks" => {
                self.ranks = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "folds" => self.folds = parse(key, value)?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "train_pairs_cap" => self.train_pairs_cap = parse(key, value)?,
            "test_pairs" => self.test_pairs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => {
                self.out_dir = opt_path(value, base)
                    .ok_or_else(|| Error::invalid("out_dir must not be empty"))?
            }
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::invalid(format!("unknown precision {value:?}"))),
                }
            }
            "threads" => self.threads = parse(key, value)?,
            "record_timing" => self.record_timing = parse_bool(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` text; `origin` names the source in error messages.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>, origin: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("{origin}:{}: expected key = value", lineno + 1))
            })?;
            self.set(k, v, base).map_err(|e| {
                Error::invalid(format!("{origin}:{}: {e}", lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path.parent(), &path.display().to_string())?;
        Ok(cfg)
    }

    /// Apply a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override {assignment:?} is not key=value")))?;
        self.set(k, v, None)
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::from("# lorafl run configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", match self.dataset {
            Dataset::Mnist => "mnist".into(),
            Dataset::Cifar10 => "cifar10".into(),
        });
        kv("images", p(&self.images));
        kv("labels", p(&self.labels));
        kv(
            "cifar_batches",
            self.cifar_batches.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        );
        kv("max_images", self.max_images.map_or("all".into(), |n| n.to_string()));
        kv("feature_mode", match self.feature_mode {
            FeatureKind::Flatten => "flatten".into(),
            FeatureKind::RandomProjection => "random_projection".into(),
            FeatureKind::File => "file".into(),
        });
        kv("feature_dim", self.feature_dim.map(|d| d.to_string()).unwrap_or_default());
        kv("feature_seed", self.feature_seed.to_string());
        kv("feature_file", p(&self.feature_file));
        kv("embed_dim", self.embed_dim.to_string());
        kv("partition", self.partition.to_string());
        kv("clients", self.clients.to_string());
        kv("clients_per_round", self.clients_per_round.to_string());
        kv("rounds", self.rounds.to_string());
        kv("local_epochs", self.local_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("ranks", join(&self.ranks));
        kv("folds", self.folds.to_string());
        kv("train_ratio", self.train_ratio.to_string());
        kv("train_pairs_cap", self.train_pairs_cap.to_string());
        kv("test_pairs", self.test_pairs.to_string());
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("precision", match self.precision {
            Precision::F32 => "f32".into(),
            Precision::F64 => "f64".into(),
        });
        kv("threads", self.threads.to_string());
        kv("record_timing", self.record_timing.to_string());
        s
    }

    /// Text of the keys that determine prepared data; a change in any of
    /// them invalidates prepared artifacts.
    pub fn data_fingerprint(&self) -> String {
        let full = self.to_text();
        let data_keys = [
            "dataset", "images", "labels", "cifar_batches", "max_images", "feature_mode",
            "feature_dim", "feature_seed", "feature_file", "partition", "clients",
            "train_ratio", "train_pairs_cap", "test_pairs", "seed",
        ];
        full.lines()
            .filter(|l| data_keys.iter().any(|k| l.starts_with(&format!("{k} = "))))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn feature_mode(&self) -> Result<FeatureMode> {
        Ok(match self.feature_mode {
            FeatureKind::Flatten => FeatureMode::Flatten,
            FeatureKind::RandomProjection => FeatureMode::RandomProjection {
                dim: self
                    .feature_dim
                    .ok_or_else(|| Error::invalid("random_projection needs feature_dim"))?,
                seed: self.feature_seed,
            },
            FeatureKind::File => FeatureMode::File(
                self.feature_file
                    .clone()
                    .ok_or_else(|| Error::invalid("feature_mode = file needs feature_file"))?,
            ),
        })
    }

    pub fn fed_config(&self, rank: usize, fold_seed: u64) -> FedConfig {
        FedConfig {
            num_clients: self.clients,
            clients_per_round: self.clients_per_round,
            rounds: self.rounds,
            local: LocalConfig {
                epochs: self.local_epochs,
                batch_size: self.batch_size,
                adam: AdamConfig::with_lr(self.lr),
            },
            rank,
            embed_dim: self.embed_dim,
            partition: self.partition,
            global_seed: fold_seed,
        }
    }

    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(fold as u64)
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::invalid("ranks must be a non-empty list of positive integers"));
        }
        if self.ranks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "rank sweep {:?} must be strictly increasing",
                self.ranks
            )));
        }
        if self.folds == 0 {
            return Err(Error::invalid("folds must be at least 1"));
        }
        if self.test_pairs == 0 || self.train_pairs_cap == 0 {
            return Err(Error::invalid("pair counts must be positive"));
        }
        self.fed_config(self.ranks[0], 0).validate()
    }

    /// Validation plus existence of every referenced input file.
    pub fn validate_inputs(&self) -> Result<()> {
        self.validate()?;
        let mut paths: Vec<&PathBuf> = Vec::new();
        match self.dataset {
            Dataset::Mnist => {
                for (name, p) in [("images", &self.images), ("labels", &self.labels)] {
                    paths.push(p.as_ref().ok_or_else(|| {
                        Error::invalid(format!("dataset = mnist needs `{name}`"))
                    })?);
                }
            }
            Dataset::Cifar10 => {
                if self.cifar_batches.is_empty() {
                    return Err(Error::invalid("dataset = cifar10 needs `cifar_batches`"));
                }
                paths.extend(&self.cifar_batches);
            }
        }
        if self.feature_mode == FeatureKind::File {
            paths.push(
                self.feature_file
                    .as_ref()
                    .ok_or_else(|| Error::invalid("feature_mode = file needs feature_file"))?,
            );
        }
        if let Some(p) = paths.into_iter().find(|p| !p.exists()) {
            return Err(Error::invalid(format!("input file {} does not exist", p.display())));
        }
        Ok(())
    }
}
