//! Parameter, bandwidth and FLOP accounting for the similarity head.
//!
//! Conventions:
//! - 4 bytes per parameter, uncompressed.
//! - A multiply-accumulate is 2 FLOPs.
//! - One training sample costs 3× its forward FLOPs (forward, then
//!   gradients for weights and for inputs).
//! - Adam is reported separately at [`ADAM_FLOPS_PER_PARAM`] per parameter
//!   per step and kept out of the headline figure.
//! - Downlink is counted only for the clients selected in a round.

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::head::{head_predict_proba, DenseHeadParams, SiameseHeadParams};
use crate::matrix::Matrix;
use crate::rng::{gaussian_matrix, rng_from};
use crate::scalar::Scalar;

pub const BYTES_PER_PARAM: usize = 4;
pub const ADAM_FLOPS_PER_PARAM: u64 = 18;
/// Sigmoid counted as negate, exp, add, divide.
pub const SIGMOID_FLOPS: u64 = 4;

/// Trainable-weight configuration of the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rank {
    LowRank(usize),
    Dense,
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::LowRank(k) => write!(f, "{k}"),
            Rank::Dense => write!(f, "dense"),
        }
    }
}

/// `2k(F+E) + k(E+1)`: two branch layers plus the similarity layer.
pub fn head_param_count(feature_dim: usize, embed_dim: usize, rank: usize) -> usize {
    2 * rank * (feature_dim + embed_dim) + rank * (embed_dim + 1)
}

/// `2FE + E` for full-rank weights.
pub fn dense_head_param_count(feature_dim: usize, embed_dim: usize) -> usize {
    2 * feature_dim * embed_dim + embed_dim
}

pub fn param_count_for(feature_dim: usize, embed_dim: usize, rank: Rank) -> usize {
    match rank {
        Rank::LowRank(k) => head_param_count(feature_dim, embed_dim, k),
        Rank::Dense => dense_head_param_count(feature_dim, embed_dim),
    }
}

/// Bytes of one parameter upload (or download).
pub fn payload_bytes(params: usize) -> usize {
    params * BYTES_PER_PARAM
}

/// Uplink plus downlink for the selected clients of one round.
pub fn round_bytes(clients_per_round: usize, payload: usize) -> usize {
    2 * clients_per_round * payload
}

pub fn run_bytes(rounds: usize, clients_per_round: usize, payload: usize) -> usize {
    rounds * round_bytes(clients_per_round, payload)
}

/// Forward FLOPs for one pair.
///
/// Low rank: `2·[2k(F+E)] + E + 2k(E+1) + 4`. Dense: `2·(2FE) + E + 2E + 4`.
pub fn forward_flops(feature_dim: usize, embed_dim: usize, rank: Rank) -> u64 {
    let (f, e) = (feature_dim as u64, embed_dim as u64);
    match rank {
        Rank::LowRank(k) => {
            let k = k as u64;
            2 * (2 * k * (f + e)) + e + 2 * k * (e + 1) + SIGMOID_FLOPS
        }
        Rank::Dense => 2 * (2 * f * e) + e + 2 * e + SIGMOID_FLOPS,
    }
}

pub fn training_flops_per_sample(feature_dim: usize, embed_dim: usize, rank: Rank) -> u64 {
    3 * forward_flops(feature_dim, embed_dim, rank)
}

/// `3f × pairs × epochs`.
pub fn training_flops(
    feature_dim: usize,
    embed_dim: usize,
    rank: Rank,
    pairs: usize,
    epochs: usize,
) -> u64 {
    training_flops_per_sample(feature_dim, embed_dim, rank) * pairs as u64 * epochs as u64
}

/// Adam FLOPs for one optimizer step over every parameter.
pub fn adam_flops_per_step(params: usize) -> u64 {
    ADAM_FLOPS_PER_PARAM * params as u64
}

/// The run shape a cost sweep is evaluated against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostSetup {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Training pairs held by one client.
    pub pairs_per_client: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub rank: Rank,
    pub params: usize,
    /// One direction, one client.
    pub payload_bytes: usize,
    pub round_bytes: usize,
    pub run_bytes: usize,
    pub flops_per_sample: u64,
    /// One client, one epoch.
    pub flops_per_epoch: u64,
    pub flops_per_run: u64,
    /// Optimizer cost for one client over the whole run, not in `flops_*`.
    pub adam_flops_per_run: u64,
    /// `dense / this` for params, bytes and FLOPs.
    pub params_ratio_vs_dense: f64,
    pub bytes_ratio_vs_dense: f64,
    pub flops_ratio_vs_dense: f64,
    /// `reference / this`, reference being the largest rank of the sweep.
    pub bytes_ratio_vs_reference: f64,
    pub flops_ratio_vs_reference: f64,
}

struct Raw {
    params: usize,
    payload: usize,
    per_sample: u64,
}

fn raw(setup: &CostSetup, rank: Rank) -> Raw {
    let params = param_count_for(setup.feature_dim, setup.embed_dim, rank);
    Raw {
        params,
        payload: payload_bytes(params),
        per_sample: training_flops_per_sample(setup.feature_dim, setup.embed_dim, rank),
    }
}

/// One report per rank of the sweep followed by the dense baseline.
pub fn cost_report(setup: &CostSetup, ranks: &[usize]) -> Result<Vec<CostReport>> {
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(Error::invalid("rank sweep must be non-empty and positive"));
    }
    if setup.feature_dim == 0 || setup.embed_dim == 0 {
        return Err(Error::invalid("feature and embedding dims must be positive"));
    }
    let dense = raw(setup, Rank::Dense);
    let reference = raw(setup, Rank::LowRank(*ranks.iter().max().unwrap()));
    let pairs = setup.pairs_per_client as u64;
    let epochs = setup.local_epochs as u64;
    let participations = (setup.rounds * setup.clients_per_round) as u64;
    let steps_per_epoch = setup.pairs_per_client.div_ceil(setup.batch_size.max(1)) as u64;

    let rows = ranks
        .iter()
        .map(|&k| Rank::LowRank(k))
        .chain([Rank::Dense])
        .map(|rank| {
            let r = raw(setup, rank);
            let per_epoch = r.per_sample * pairs;
            CostReport {
                rank,
                params: r.params,
                payload_bytes: r.payload,
                round_bytes: round_bytes(setup.clients_per_round, r.payload),
                run_bytes: run_bytes(setup.rounds, setup.clients_per_round, r.payload),
                flops_per_sample: r.per_sample,
                flops_per_epoch: per_epoch,
                flops_per_run: per_epoch * epochs * participations,
                adam_flops_per_run: adam_flops_per_step(r.params) * steps_per_epoch * epochs * participations,
                params_ratio_vs_dense: dense.params as f64 / r.params as f64,
                bytes_ratio_vs_dense: dense.payload as f64 / r.payload as f64,
                flops_ratio_vs_dense: dense.per_sample as f64 / r.per_sample as f64,
                bytes_ratio_vs_reference: reference.payload as f64 / r.payload as f64,
                flops_ratio_vs_reference: reference.per_sample as f64 / r.per_sample as f64,
            }
        })
        .collect();
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Instrumented operation counting
// ---------------------------------------------------------------------------

/// Arithmetic tallies collected while [`Counted`] values are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub adds: u64,
    pub muls: u64,
    /// Divisions, negations, exp and sqrt.
    pub other: u64,
}

impl OpTally {
    pub fn total(&self) -> u64 {
        self.adds + self.muls + self.other
    }

    fn add(&mut self) {
        self.adds += 1;
    }

    fn mul(&mut self) {
        self.muls += 1;
    }

    fn other_op(&mut self) {
        self.other += 1;
    }
}

thread_local! {
    static TALLY: Cell<OpTally> = Cell::new(OpTally::default());
}

fn bump(f: impl FnOnce(&mut OpTally)) {
    TALLY.with(|t| {
        let mut v = t.get();
        f(&mut v);
        t.set(v);
    });
}

/// An `f64` that records every arithmetic operation performed on it.
///
/// Running the real forward pass with `T = Counted` yields an operation
/// count independent of the closed-form formulas above.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

impl fmt::Display for Counted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Add for Counted {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        bump(OpTally::add);
        Counted(self.0 + rhs.0)
    }
}

impl Sub for Counted {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        bump(OpTally::add);
        Counted(self.0 - rhs.0)
    }
}

impl Mul for Counted {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        bump(OpTally::mul);
        Counted(self.0 * rhs.0)
    }
}

impl Div for Counted {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        bump(OpTally::other_op);
        Counted(self.0 / rhs.0)
    }
}

impl Neg for Counted {
    type Output = Self;
    fn neg(self) -> Self {
        bump(OpTally::other_op);
        Counted(-self.0)
    }
}

impl AddAssign for Counted {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Scalar for Counted {
    const NAME: &'static str = "counted";

    fn zero() -> Self {
        Counted(0.0)
    }
    fn one() -> Self {
        Counted(1.0)
    }
    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    /// Sign-bit clear; not a FLOP, so `|a - b|` costs one op per element.
    fn abs(self) -> Self {
        Counted(self.0.abs())
    }
    fn exp(self) -> Self {
        bump(OpTally::other_op);
        Counted(self.0.exp())
    }
    fn sqrt(self) -> Self {
        bump(OpTally::other_op);
        Counted(self.0.sqrt())
    }
    fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

/// Run `f` and return its result with the operations it performed on
/// [`Counted`] values in this thread.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpTally) {
    let saved = TALLY.with(|t| t.replace(OpTally::default()));
    let out = f();
    let tally = TALLY.with(|t| t.replace(saved));
    (out, tally)
}

/// Operations performed by one single-pair inference pass of a real head.
///
/// At most one op below [`forward_flops`]: the sigmoid costs 3 or 4
/// depending on the sign of its input, and the formula charges 4.
pub fn instrumented_forward_flops(
    feature_dim: usize,
    embed_dim: usize,
    rank: Rank,
    seed: u64,
) -> Result<OpTally> {
    let mut rng = rng_from(seed);
    let x1: Matrix<Counted> = gaussian_matrix(1, feature_dim, 1.0, &mut rng);
    let x2: Matrix<Counted> = gaussian_matrix(1, feature_dim, 1.0, &mut rng);
    match rank {
        Rank::LowRank(k) => {
            let params = SiameseHeadParams::<Counted>::init(feature_dim, embed_dim, k, seed)?;
            let (res, tally) = count_ops(|| head_predict_proba(&params, &x1, &x2));
            res?;
            Ok(tally)
        }
        Rank::Dense => {
            let params = DenseHeadParams::<Counted>::init(feature_dim, embed_dim, seed)?;
            let (res, tally) = count_ops(|| params.forward(&x1, &x2));
            res?;
            Ok(tally)
        }
    }
}
