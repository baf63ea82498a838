//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::PathBuf;

use lorafl::data::ImageStore;
use lorafl::head::{head_backward, head_forward, head_predict_proba};
use lorafl::rng::{gaussian_matrix, rng_from};
use lorafl::training::bce_loss;
use lorafl::{Matrix, SiameseHeadParams};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn mnist_images() -> PathBuf {
    fixture("mnist10k-images-idx3-ubyte.gz")
}

pub fn mnist_labels() -> PathBuf {
    fixture("mnist10k-labels-idx1-ubyte.gz")
}

/// Random `n`-image store with `classes` labels cycling in order.
pub fn synthetic_images(n: usize, side: usize, channels: usize, classes: usize, seed: u64) -> ImageStore {
    let mut rng = rng_from(seed);
    let per = side * side * channels;
    let pixels = (0..n * per).map(|_| rng.random::<u8>()).collect();
    let labels = (0..n).map(|i| (i % classes) as u8).collect();
    ImageStore::new(side, side, channels, classes, pixels, labels).unwrap()
}

/// Outcome of one finite-difference comparison over every factor entry.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub entries: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Central differences (step `h`) of the mean BCE against the analytic
/// head gradients for a random instance drawn from `seed`. Relative error
/// is `|a − n| / max(|a|, |n|)`, with no floor.
pub fn head_fd_check(seed: u64, h: f64) -> FdReport {
    let mut rng = rng_from(seed ^ 0xfd);
    let n = rng.random_range(2..=6);
    let f = rng.random_range(3..=10);
    let e = rng.random_range(2..=6);
    let k = rng.random_range(1..=4);
    let params = SiameseHeadParams::<f64>::init(f, e, k, seed).unwrap();
    let x1: Matrix<f64> = gaussian_matrix(n, f, 1.0, &mut rng);
    let x2: Matrix<f64> = gaussian_matrix(n, f, 1.0, &mut rng);
    let y = Matrix::from_fn(n, 1, |i, _| (i % 2) as f64);

    let (_, cache) = head_forward(&params, &x1, &x2).unwrap();
    let grads = head_backward(&params, &cache, &y).unwrap();
    let loss = |p: &SiameseHeadParams<f64>| bce_loss(&head_predict_proba(p, &x1, &x2).unwrap(), &y).unwrap();

    let mut report = FdReport { entries: 0, max_rel: 0.0, max_abs: 0.0 };
    for (which, g) in grads.as_array().into_iter().enumerate() {
        for idx in 0..g.len() {
            let mut plus = params.clone();
            plus.factors_mut()[which].as_mut_slice()[idx] += h;
            let mut minus = params.clone();
            minus.factors_mut()[which].as_mut_slice()[idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = g.as_slice()[idx];
            let abs = (analytic - numeric).abs();
            let scale = analytic.abs().max(numeric.abs());
            let rel = if scale == 0.0 { 0.0 } else { abs / scale };
            report.entries += 1;
            report.max_rel = report.max_rel.max(rel);
            report.max_abs = report.max_abs.max(abs);
        }
    }
    report
}
