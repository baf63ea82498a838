//! Loss, Adam, the client-side training loop and pair-accuracy evaluation.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use crate::data::PairExample;
use crate::error::{Error, Result};
use crate::head::{head_backward, head_forward, head_predict_proba, HeadGrads, SiameseHeadParams};
use crate::matrix::Matrix;
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// Probabilities are clamped to `[P_CLAMP, 1 − P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy `−mean(y ln p + (1 − y) ln(1 − p))`.
pub fn bce_loss<T: Scalar>(p: &Matrix<T>, y: &Matrix<T>) -> Result<f64> {
    p.check_same_shape(y, "bce_loss")?;
    let mut total = 0.0;
    for (&p, &y) in p.as_slice().iter().zip(y.as_slice()) {
        let y = y.to_f64();
        if y != 0.0 && y != 1.0 {
            return Err(Error::invalid(format!("label {y} is not 0 or 1")));
        }
        let p = p.to_f64().clamp(P_CLAMP, 1.0 - P_CLAMP);
        total -= if y == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / p.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moments for the six factor matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: [Matrix<T>; 6],
    pub v: [Matrix<T>; 6],
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &SiameseHeadParams<T>) -> Self {
        let zeros = || params.factors().map(|f| Matrix::zeros(f.rows(), f.cols()));
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// Per-step constants shared by every entry.
#[derive(Clone, Copy, Debug)]
pub struct AdamCoefficients<T> {
    beta1: T,
    beta2: T,
    one_minus_beta1: T,
    one_minus_beta2: T,
    bias1: T,
    bias2: T,
    lr: T,
    eps: T,
}

impl<T: Scalar> AdamCoefficients<T> {
    /// Coefficients for step number `t` (1-based).
    pub fn for_step(cfg: &AdamConfig, t: u64) -> Self {
        let t = t as i32;
        Self {
            beta1: T::from_f64(cfg.beta1),
            beta2: T::from_f64(cfg.beta2),
            one_minus_beta1: T::from_f64(1.0 - cfg.beta1),
            one_minus_beta2: T::from_f64(1.0 - cfg.beta2),
            bias1: T::from_f64(1.0 - cfg.beta1.powi(t)),
            bias2: T::from_f64(1.0 - cfg.beta2.powi(t)),
            lr: T::from_f64(cfg.lr),
            eps: T::from_f64(cfg.eps),
        }
    }
}

/// Entrywise Adam update of `w` in place.
pub fn adam_update_slice<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    c: &AdamCoefficients<T>,
) {
    debug_assert!(w.len() == g.len() && w.len() == m.len() && w.len() == v.len());
    for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = c.beta1 * *m + c.one_minus_beta1 * g;
        *v = c.beta2 * *v + c.one_minus_beta2 * g * g;
        let m_hat = *m / c.bias1;
        let v_hat = *v / c.bias2;
        *w = *w - c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

/// One Adam step over all six factors.
pub fn adam_step<T: Scalar>(
    params: &mut SiameseHeadParams<T>,
    grads: &HeadGrads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (p, g) in params.factors().iter().zip(grads.as_array()) {
        p.check_same_shape(g, "adam_step")?;
    }
    state.t += 1;
    let c = AdamCoefficients::for_step(cfg, state.t);
    let grads = grads.as_array();
    for (i, w) in params.factors_mut().into_iter().enumerate() {
        adam_update_slice(
            w.as_mut_slice(),
            grads[i].as_slice(),
            state.m[i].as_mut_slice(),
            state.v[i].as_mut_slice(),
            &c,
        );
    }
    Ok(())
}

/// Client-side training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    /// Running mean of batch losses, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub samples_seen: usize,
    pub steps: usize,
    pub elapsed: Duration,
}

impl TrainStats {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Gather a mini-batch of pair features and labels.
pub fn gather_batch<T: Scalar>(
    features: &Matrix<T>,
    pairs: &[PairExample],
    order: &[usize],
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let i1: Vec<usize> = order.iter().map(|&i| pairs[i].idx1).collect();
    let i2: Vec<usize> = order.iter().map(|&i| pairs[i].idx2).collect();
    let y = Matrix::from_fn(order.len(), 1, |r, _| {
        T::from_f64(f64::from(pairs[order[r]].label))
    });
    (features.select_rows(&i1), features.select_rows(&i2), y)
}

fn check_pairs(features: &Matrix<impl Scalar>, pairs: &[PairExample]) -> Result<()> {
    let n = features.rows();
    if let Some(p) = pairs.iter().find(|p| p.idx1 >= n || p.idx2 >= n) {
        return Err(Error::invalid(format!(
            "pair ({}, {}) references an image outside the {n}-row feature table",
            p.idx1, p.idx2
        )));
    }
    Ok(())
}

/// Local training of all six factors on shuffled mini-batches.
///
/// Adam state starts fresh on every call. Each epoch reshuffles the pair
/// order from a single stream seeded by `seed`; the last partial batch is
/// kept.
pub fn train_local<T: Scalar>(
    params: &SiameseHeadParams<T>,
    features: &Matrix<T>,
    pairs: &[PairExample],
    cfg: &LocalConfig,
    seed: u64,
) -> Result<(SiameseHeadParams<T>, TrainStats)> {
    if pairs.is_empty() {
        return Err(Error::invalid("client has no training pairs"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if features.cols() != params.feature_dim() {
        return Err(Error::dim(
            "train_local",
            format!(
                "features have {} columns, head expects {}",
                features.cols(),
                params.feature_dim()
            ),
        ));
    }
    check_pairs(features, pairs)?;

    let start = Instant::now();
    let mut params = params.clone();
    let mut state = AdamState::new(&params);
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut stats = TrainStats::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x1, x2, y) = gather_batch(features, pairs, chunk);
            let (p, cache) = head_forward(&params, &x1, &x2)?;
            loss_sum += bce_loss(&p, &y)?;
            batches += 1;
            let grads = head_backward(&params, &cache, &y)?;
            adam_step(&mut params, &grads, &mut state, &cfg.adam)?;
            stats.samples_seen += chunk.len();
            stats.steps += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("train_local"));
        }
        stats.epoch_losses.push(loss_sum / batches as f64);
    }
    stats.elapsed = start.elapsed();
    Ok((params, stats))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 512;

/// Pair accuracy at threshold 0.5 (ties count as "same") and mean BCE.
pub fn evaluate<T: Scalar>(
    params: &SiameseHeadParams<T>,
    features: &Matrix<T>,
    pairs: &[PairExample],
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    check_pairs(features, pairs)?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let order: Vec<usize> = (0..pairs.len()).collect();
    for chunk in order.chunks(EVAL_CHUNK) {
        let (x1, x2, y) = gather_batch(features, pairs, chunk);
        let p = head_predict_proba(params, &x1, &x2)?;
        loss_sum += bce_loss(&p, &y)? * chunk.len() as f64;
        for (&p, &y) in p.as_slice().iter().zip(y.as_slice()) {
            let same = p.to_f64() >= 0.5;
            if same == (y.to_f64() == 1.0) {
                correct += 1;
            }
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / pairs.len() as f64,
        loss: loss_sum / pairs.len() as f64,
    })
}
