//! Dataset preparation: frozen features plus per-fold client shards and pairs.
//!
//! Artifacts written to `<out_dir>/prepared/`:
//! `features.lfft`, `fold<f>.pairs` (text) and `manifest.txt`, which records
//! the data fingerprint of the config and a SHA-256 of every other file.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{Dataset, RunConfig};
use crate::data::{
    build_pairs, extract_features, load_cifar10, load_mnist, partition_iid, partition_noniid,
    read_feature_file, split_train_test, write_feature_file, ClientShard, ImageStore, PairExample,
};
use crate::error::{Error, Result};
use crate::federation::PartitionMode;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream};

const MANIFEST_TAG: &str = "# lorafl manifest v1";
const PAIRS_TAG: &str = "# lorafl pairs v1";

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedFold {
    pub fold: usize,
    pub seed: u64,
    /// Image indices on the training side of the split, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub shards: Vec<ClientShard>,
    pub test_pairs: Vec<PairExample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub features: Matrix<f32>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub folds: Vec<PreparedFold>,
}

pub fn prepared_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("prepared")
}

pub fn load_images(cfg: &RunConfig) -> Result<ImageStore> {
    cfg.validate_inputs()?;
    let store = match cfg.dataset {
        Dataset::Mnist => load_mnist(
            cfg.images.as_deref().expect("validated"),
            cfg.labels.as_deref().expect("validated"),
        )?,
        Dataset::Cifar10 => load_cifar10(&cfg.cifar_batches)?,
    };
    Ok(match cfg.max_images {
        Some(n) if n < store.len() => store.truncated(n),
        _ => store,
    })
}

/// Split, partition and pair sampling for one fold.
pub fn prepare_fold(
    cfg: &RunConfig,
    labels: &[u8],
    num_classes: usize,
    fold: usize,
) -> Result<PreparedFold> {
    let seed = cfg.fold_seed(fold);
    let all: Vec<usize> = (0..labels.len()).collect();
    let (train, test) = split_train_test(&all, cfg.train_ratio, derive_seed(seed, &[stream::SPLIT]))?;
    let groups: Vec<(Vec<usize>, BTreeSet<u8>)> = match cfg.partition {
        PartitionMode::Iid => partition_iid(&train, cfg.clients, derive_seed(seed, &[stream::PARTITION]))?
            .into_iter()
            .map(|idx| {
                let classes = idx.iter().map(|&i| labels[i]).collect();
                (idx, classes)
            })
            .collect(),
        PartitionMode::NonIid => partition_noniid(labels, &train, num_classes, cfg.clients)?,
    };
    let shards = groups
        .into_iter()
        .enumerate()
        .map(|(c, (indices, classes))| {
            let n = cfg.train_pairs_cap.min(2 * indices.len());
            let pairs = build_pairs(labels, &indices, n, derive_seed(seed, &[stream::PAIRS, c as u64]))
                .map_err(|e| Error::invalid(format!("fold {fold}, client {c}: {e}")))?;
            Ok(ClientShard {
                client_id: c,
                indices,
                classes,
                pairs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test_pairs = build_pairs(labels, &test, cfg.test_pairs, derive_seed(seed, &[stream::TEST_PAIRS]))?;
    Ok(PreparedFold {
        fold,
        seed,
        train,
        test,
        shards,
        test_pairs,
    })
}

/// Load the dataset, extract features and build every fold in memory.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let store = load_images(cfg)?;
    let features = extract_features::<f32>(&store, &cfg.feature_mode()?)?;
    if let Some(d) = cfg.feature_dim {
        if d != features.dim() {
            return Err(Error::invalid(format!(
                "feature_dim = {d} but {} features are {}-dimensional",
                features.mode(),
                features.dim()
            )));
        }
    }
    let labels = store.labels().to_vec();
    let folds = (0..cfg.folds)
        .map(|f| prepare_fold(cfg, &labels, store.num_classes(), f))
        .collect::<Result<_>>()?;
    Ok(Prepared {
        features: features.matrix().clone(),
        labels,
        num_classes: store.num_classes(),
        folds,
    })
}

fn join_usize(v: impl IntoIterator<Item = usize>) -> String {
    v.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn encode_fold(f: &PreparedFold) -> String {
    let mut s = format!("{PAIRS_TAG}\nfold {} seed {}\n", f.fold, f.seed);
    let _ = writeln!(s, "train {}", join_usize(f.train.iter().copied()));
    let _ = writeln!(s, "test {}", join_usize(f.test.iter().copied()));
    for sh in &f.shards {
        let classes = sh.classes.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            s,
            "shard {} classes {classes} indices {}",
            sh.client_id,
            join_usize(sh.indices.iter().copied())
        );
    }
    for sh in &f.shards {
        for p in &sh.pairs {
            let _ = writeln!(s, "pair {} {} {} {}", sh.client_id, p.idx1, p.idx2, p.label);
        }
    }
    for p in &f.test_pairs {
        let _ = writeln!(s, "testpair {} {} {}", p.idx1, p.idx2, p.label);
    }
    s
}

fn bad(path: &Path, line: usize, what: &str) -> Error {
    Error::Format(format!("{}:{line}: {what}", path.display()))
}

fn nums<T: std::str::FromStr>(words: &[&str], path: &Path, line: usize) -> Result<Vec<T>> {
    words
        .iter()
        .map(|w| w.parse().map_err(|_| bad(path, line, &format!("bad number {w:?}"))))
        .collect()
}

fn decode_fold(text: &str, path: &Path) -> Result<PreparedFold> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(PAIRS_TAG) {
        return Err(bad(path, 1, "missing pairs header"));
    }
    let mut fold = PreparedFold {
        fold: 0,
        seed: 0,
        train: Vec::new(),
        test: Vec::new(),
        shards: Vec::new(),
        test_pairs: Vec::new(),
    };
    for (i, line) in lines {
        let n = i + 1;
        let w: Vec<&str> = line.split_whitespace().collect();
        match w.as_slice() {
            ["fold", f, "seed", s] => {
                fold.fold = nums(&[f], path, n)?[0];
                fold.seed = nums(&[s], path, n)?[0];
            }
            ["train", rest @ ..] => fold.train = nums(rest, path, n)?,
            ["test", rest @ ..] => fold.test = nums(rest, path, n)?,
            ["shard", c, "classes", classes, "indices", rest @ ..] => {
                let id: usize = nums(&[c], path, n)?[0];
                if id != fold.shards.len() {
                    return Err(bad(path, n, "shards out of order"));
                }
                let classes: Vec<&str> = classes.split(',').filter(|s| !s.is_empty()).collect();
                fold.shards.push(ClientShard {
                    client_id: id,
                    indices: nums(rest, path, n)?,
                    classes: nums::<u8>(&classes, path, n)?.into_iter().collect(),
                    pairs: Vec::new(),
                });
            }
            ["pair", c, a, b, l] => {
                let v: Vec<usize> = nums(&[c, a, b, l], path, n)?;
                let shard = fold
                    .shards
                    .get_mut(v[0])
                    .ok_or_else(|| bad(path, n, "pair for unknown client"))?;
                shard.pairs.push(PairExample {
                    idx1: v[1],
                    idx2: v[2],
                    label: v[3] as u8,
                });
            }
            ["testpair", a, b, l] => {
                let v: Vec<usize> = nums(&[a, b, l], path, n)?;
                fold.test_pairs.push(PairExample {
                    idx1: v[0],
                    idx2: v[1],
                    label: v[2] as u8,
                });
            }
            [] => {}
            _ => return Err(bad(path, n, "unrecognised line")),
        }
    }
    Ok(fold)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

/// Write `prepared` under `dir`, returning the manifest path.
pub fn write_prepared(cfg: &RunConfig, prepared: &Prepared, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    let feat_path = dir.join("features.lfft");
    write_feature_file(&feat_path, &prepared.features)?;
    files.push(("features.lfft".into(), fs::read(&feat_path)?));
    let labels_bytes = prepared.labels.clone();
    write_file(&dir.join("labels.bin"), &labels_bytes)?;
    files.push(("labels.bin".into(), labels_bytes));
    for f in &prepared.folds {
        let name = format!("fold{}.pairs", f.fold);
        let text = encode_fold(f).into_bytes();
        write_file(&dir.join(&name), &text)?;
        files.push((name, text));
    }

    let mut m = format!("{MANIFEST_TAG}\n");
    let _ = writeln!(m, "fingerprint {}", cfg.data_fingerprint());
    let _ = writeln!(m, "images {}", prepared.labels.len());
    let _ = writeln!(m, "num_classes {}", prepared.num_classes);
    let _ = writeln!(m, "feature_dim {}", prepared.features.cols());
    let _ = writeln!(m, "folds {}", prepared.folds.len());
    for f in &prepared.folds {
        let _ = writeln!(
            m,
            "fold {} seed {} train_images {} test_images {} test_pairs {}",
            f.fold,
            f.seed,
            f.train.len(),
            f.test.len(),
            f.test_pairs.len()
        );
        for s in &f.shards {
            let classes = s.classes.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                m,
                "fold {} client {} classes {classes} images {} pairs {}",
                f.fold,
                s.client_id,
                s.indices.len(),
                s.pair_count()
            );
        }
    }
    for (name, bytes) in &files {
        let _ = writeln!(m, "sha256 {name} {}", sha256_hex(bytes));
    }
    let manifest = dir.join("manifest.txt");
    write_file(&manifest, m.as_bytes())?;
    Ok(manifest)
}

/// Read prepared artifacts, checking they were built from a config with the
/// same data fingerprint and that no file changed since.
pub fn load_prepared(cfg: &RunConfig, dir: &Path) -> Result<Prepared> {
    let manifest_path = dir.join("manifest.txt");
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::invalid(format!(
            "no prepared data at {} ({e}); run `lorafl prepare` first",
            dir.display()
        ))
    })?;
    let mut lines = manifest.lines();
    if lines.next() != Some(MANIFEST_TAG) {
        return Err(Error::Format(format!("{} is not a manifest", manifest_path.display())));
    }
    let mut num_classes = 0;
    let mut fingerprint_ok = false;
    let mut checksums = Vec::new();
    for line in lines {
        if let Some(fp) = line.strip_prefix("fingerprint ") {
            fingerprint_ok = fp == cfg.data_fingerprint();
        } else if let Some(n) = line.strip_prefix("num_classes ") {
            num_classes = n.parse().map_err(|_| Error::Format("bad num_classes".into()))?;
        } else if let Some(rest) = line.strip_prefix("sha256 ") {
            let (name, digest) = rest
                .split_once(' ')
                .ok_or_else(|| Error::Format("bad checksum line".into()))?;
            checksums.push((name.to_string(), digest.to_string()));
        }
    }
    if !fingerprint_ok {
        return Err(Error::invalid(format!(
            "prepared data in {} was built with different data settings; rerun `lorafl prepare`",
            dir.display()
        )));
    }
    for (name, digest) in &checksums {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::from(e).in_file(&path))?;
        if sha256_hex(&bytes) != *digest {
            return Err(Error::invalid(format!("{} changed since it was prepared", path.display())));
        }
    }
    let features = read_feature_file(&dir.join("features.lfft"))?;
    let labels_path = dir.join("labels.bin");
    let labels = fs::read(&labels_path).map_err(|e| Error::from(e).in_file(&labels_path))?;
    if labels.len() != features.rows() {
        return Err(Error::invalid("feature rows and labels disagree"));
    }
    let folds = (0..cfg.folds)
        .map(|f| {
            let path = dir.join(format!("fold{f}.pairs"));
            let text = fs::read_to_string(&path).map_err(|e| Error::from(e).in_file(&path))?;
            decode_fold(&text, &path)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        features,
        labels,
        num_classes,
        folds,
    })
}
