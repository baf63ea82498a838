//! Python bindings: the Siamese LoRA head, local training, FedAvg, the cost
//! model, checkpoints and the experiment commands.
//!
//! Matrices cross the boundary as lists of row lists; the head computes in
//! 64-bit. Checkpoints store 32-bit values.

use std::path::PathBuf;

use lorafl::checkpoint;
use lorafl::cost::{self, Rank};
use lorafl::data::PairExample;
use lorafl::experiment::{self, RunConfig};
use lorafl::federation::{aggregate as fed_aggregate, ClientUpdate};
use lorafl::head::head_predict_proba;
use lorafl::lowrank::ParamCount;
use lorafl::training::{evaluate, train_local, AdamConfig, LocalConfig};
use lorafl::{Matrix, SiameseHeadParams};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: lorafl::Error) -> PyErr {
    match e {
        lorafl::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Matrix::from_vec(n, m, rows.concat()).map_err(py_err)
}

fn to_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn to_pairs(pairs: Vec<(usize, usize, u8)>) -> Vec<PairExample> {
    pairs
        .into_iter()
        .map(|(idx1, idx2, label)| PairExample { idx1, idx2, label })
        .collect()
}

/// Siamese similarity head with low-rank branch and similarity layers.
#[pyclass(name = "Head", module = "pylorafl", from_py_object)]
#[derive(Clone)]
struct PyHead {
    inner: SiameseHeadParams<f64>,
}

#[pymethods]
impl PyHead {
    #[new]
    #[pyo3(signature = (feature_dim, embed_dim, rank, seed = 0))]
    fn new(feature_dim: usize, embed_dim: usize, rank: usize, seed: u64) -> PyResult<Self> {
        SiameseHeadParams::init(feature_dim, embed_dim, rank, seed)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// Build a head from `[A1, B1, A2, B2, A_s, B_s]`.
    #[staticmethod]
    fn from_factors(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mats = factors.into_iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
        let arr: [Matrix<f64>; 6] = mats
            .try_into()
            .map_err(|_| PyValueError::new_err("expected six factor matrices"))?;
        SiameseHeadParams::from_factors(arr)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load_checkpoint(&path)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn factors(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.factors().into_iter().map(to_rows).collect()
    }

    /// Similarity probability for each row pair of `x1`, `x2`.
    fn predict_proba(&self, x1: Vec<Vec<f64>>, x2: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let p = head_predict_proba(&self.inner, &to_matrix(x1)?, &to_matrix(x2)?).map_err(py_err)?;
        Ok(p.as_slice().to_vec())
    }

    /// Local Adam training on `(i, j, label)` pairs over the rows of
    /// `features`. Returns the trained head and per-epoch mean losses.
    #[pyo3(signature = (features, pairs, epochs = 5, batch_size = 32, lr = 1e-3, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        py: Python<'_>,
        features: Vec<Vec<f64>>,
        pairs: Vec<(usize, usize, u8)>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<(PyHead, Vec<f64>)> {
        let features = to_matrix(features)?;
        let pairs = to_pairs(pairs);
        let cfg = LocalConfig {
            epochs,
            batch_size,
            adam: AdamConfig::with_lr(lr),
        };
        let (params, stats) = py
            .detach(|| train_local(&self.inner, &features, &pairs, &cfg, seed))
            .map_err(py_err)?;
        Ok((PyHead { inner: params }, stats.epoch_losses))
    }

    /// `(accuracy, mean loss)` on labelled pairs at threshold 0.5.
    fn evaluate(&self, features: Vec<Vec<f64>>, pairs: Vec<(usize, usize, u8)>) -> PyResult<(f64, f64)> {
        let e = evaluate(&self.inner, &to_matrix(features)?, &to_pairs(pairs)).map_err(py_err)?;
        Ok((e.accuracy, e.loss))
    }

    fn __eq__(&self, other: &PyHead) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Head(feature_dim={}, embed_dim={}, rank={})",
            self.inner.feature_dim(),
            self.inner.embed_dim(),
            self.inner.rank()
        )
    }
}

/// Sample-weighted FedAvg of the factor matrices.
#[pyfunction]
fn aggregate(heads: Vec<PyHead>, weights: Vec<f64>) -> PyResult<PyHead> {
    if heads.len() != weights.len() {
        return Err(PyValueError::new_err("one weight per head is required"));
    }
    let updates: Vec<ClientUpdate<f64>> = heads
        .into_iter()
        .zip(weights)
        .enumerate()
        .map(|(client_id, (h, weight))| ClientUpdate {
            client_id,
            params: h.inner,
            weight,
        })
        .collect();
    fed_aggregate(&updates).map(|inner| PyHead { inner }).map_err(py_err)
}

/// Trainable parameters of a rank-`k` head.
#[pyfunction]
fn head_param_count(feature_dim: usize, embed_dim: usize, rank: usize) -> usize {
    cost::head_param_count(feature_dim, embed_dim, rank)
}

/// Closed-form forward FLOPs per pair; `rank = None` is the dense head.
#[pyfunction]
#[pyo3(signature = (feature_dim, embed_dim, rank = None))]
fn forward_flops(feature_dim: usize, embed_dim: usize, rank: Option<usize>) -> u64 {
    cost::forward_flops(feature_dim, embed_dim, rank.map_or(Rank::Dense, Rank::LowRank))
}

/// One dict per rank plus the dense baseline.
#[pyfunction]
#[pyo3(signature = (feature_dim, embed_dim, ranks, clients_per_round = 3, rounds = 10, local_epochs = 5, pairs_per_client = 5000, batch_size = 32))]
#[allow(clippy::too_many_arguments)]
fn cost_report<'py>(
    py: Python<'py>,
    feature_dim: usize,
    embed_dim: usize,
    ranks: Vec<usize>,
    clients_per_round: usize,
    rounds: usize,
    local_epochs: usize,
    pairs_per_client: usize,
    batch_size: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let setup = cost::CostSetup {
        feature_dim,
        embed_dim,
        clients_per_round,
        rounds,
        local_epochs,
        pairs_per_client,
        batch_size,
    };
    cost::cost_report(&setup, &ranks)
        .map_err(py_err)?
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("k_or_dense", r.rank.to_string())?;
            d.set_item("params", r.params)?;
            d.set_item("payload_bytes", r.payload_bytes)?;
            d.set_item("round_bytes", r.round_bytes)?;
            d.set_item("run_bytes", r.run_bytes)?;
            d.set_item("flops_per_sample", r.flops_per_sample)?;
            d.set_item("flops_per_run", r.flops_per_run)?;
            d.set_item("adam_flops_per_run", r.adam_flops_per_run)?;
            d.set_item("bytes_ratio_vs_dense", r.bytes_ratio_vs_dense)?;
            d.set_item("flops_ratio_vs_dense", r.flops_ratio_vs_dense)?;
            Ok(d)
        })
        .collect()
}

/// Run one CLI command (`prepare`, `federate`, `centralized`, `cost`,
/// `plot`) from an optional config file plus `key=value` overrides.
#[pyfunction]
#[pyo3(signature = (command, config = None, overrides = Vec::new()))]
fn run_command(py: Python<'_>, command: &str, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(&p).map_err(py_err)?,
        None => RunConfig::default(),
    };
    for o in &overrides {
        cfg.apply_override(o).map_err(py_err)?;
    }
    py.detach(|| match command {
        "prepare" => experiment::cmd_prepare(&cfg).map(drop),
        "federate" => experiment::cmd_federate(&cfg).map(drop),
        "centralized" => experiment::cmd_centralized(&cfg).map(drop),
        "cost" => experiment::cmd_cost(&cfg).map(drop),
        "plot" => experiment::cmd_plot(&cfg).map(drop),
        other => Err(lorafl::Error::Validation(format!("unknown command {other:?}"))),
    })
    .map_err(py_err)
}

#[pymodule]
fn pylorafl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHead>()?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(head_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(forward_flops, m)?)?;
    m.add_function(wrap_pyfunction!(cost_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
