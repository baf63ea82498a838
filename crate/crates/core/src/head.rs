//! The one-shot Siamese similarity head.
//!
//! ```text
//! x1 ──fc_lora_1──► u1 ─┐
//!                       ├─ |u1 − u2| ──similarity_lora──► s ──σ──► p
//! x2 ──fc_lora_2──► u2 ─┘
//! ```
//!
//! The two branch layers are separate weights. Features `x1`, `x2` come from
//! a frozen extractor and receive no gradient.

use crate::error::{Error, Result};
use crate::lowrank::{DenseLayer, LoRaLayer, ParamCount};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::scalar::{sigmoid, Scalar};

pub const DEFAULT_EMBED_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct SiameseHeadParams<T> {
    fc_lora_1: LoRaLayer<T>,
    fc_lora_2: LoRaLayer<T>,
    similarity_lora: LoRaLayer<T>,
}

impl<T: Scalar> SiameseHeadParams<T> {
    pub fn new(
        fc_lora_1: LoRaLayer<T>,
        fc_lora_2: LoRaLayer<T>,
        similarity_lora: LoRaLayer<T>,
    ) -> Result<Self> {
        let shape = |l: &LoRaLayer<T>| (l.in_dim(), l.out_dim(), l.rank());
        if shape(&fc_lora_1) != shape(&fc_lora_2) {
            return Err(Error::dim(
                "SiameseHeadParams::new",
                format!(
                    "branch layers differ: {:?} vs {:?}",
                    shape(&fc_lora_1),
                    shape(&fc_lora_2)
                ),
            ));
        }
        let (_, e, k) = shape(&fc_lora_1);
        if shape(&similarity_lora) != (e, 1, k) {
            return Err(Error::dim(
                "SiameseHeadParams::new",
                format!(
                    "similarity layer is {:?}, expected {:?}",
                    shape(&similarity_lora),
                    (e, 1, k)
                ),
            ));
        }
        Ok(Self {
            fc_lora_1,
            fc_lora_2,
            similarity_lora,
        })
    }

    /// Seeded initialization; each layer draws from its own derived stream.
    pub fn init(feature_dim: usize, embed_dim: usize, rank: usize, seed: u64) -> Result<Self> {
        Self::new(
            LoRaLayer::init(feature_dim, embed_dim, rank, derive_seed(seed, &[1]))?,
            LoRaLayer::init(feature_dim, embed_dim, rank, derive_seed(seed, &[2]))?,
            LoRaLayer::init(embed_dim, 1, rank, derive_seed(seed, &[3]))?,
        )
    }

    /// Rebuild from the six factors in `[A1, B1, A2, B2, A_s, B_s]` order.
    pub fn from_factors(f: [Matrix<T>; 6]) -> Result<Self> {
        let [a1, b1, a2, b2, a_s, b_s] = f;
        Self::new(
            LoRaLayer::new(a1, b1)?,
            LoRaLayer::new(a2, b2)?,
            LoRaLayer::new(a_s, b_s)?,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.fc_lora_1.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.fc_lora_1.out_dim()
    }

    pub fn rank(&self) -> usize {
        self.fc_lora_1.rank()
    }

    pub fn fc_lora_1(&self) -> &LoRaLayer<T> {
        &self.fc_lora_1
    }

    pub fn fc_lora_2(&self) -> &LoRaLayer<T> {
        &self.fc_lora_2
    }

    pub fn similarity_lora(&self) -> &LoRaLayer<T> {
        &self.similarity_lora
    }

    pub fn similarity_lora_mut(&mut self) -> &mut LoRaLayer<T> {
        &mut self.similarity_lora
    }

    /// Factors in the fixed `[A1, B1, A2, B2, A_s, B_s]` order used for
    /// optimizer state, aggregation and checkpoints.
    pub fn factors(&self) -> [&Matrix<T>; 6] {
        [
            self.fc_lora_1.a(),
            self.fc_lora_1.b(),
            self.fc_lora_2.a(),
            self.fc_lora_2.b(),
            self.similarity_lora.a(),
            self.similarity_lora.b(),
        ]
    }

    pub fn factors_mut(&mut self) -> [&mut Matrix<T>; 6] {
        let (a1, b1) = split(&mut self.fc_lora_1);
        let (a2, b2) = split(&mut self.fc_lora_2);
        let (a_s, b_s) = split(&mut self.similarity_lora);
        [a1, b1, a2, b2, a_s, b_s]
    }

    pub fn cast<U: Scalar>(&self) -> SiameseHeadParams<U> {
        let f = self.factors().map(|m| m.cast::<U>());
        SiameseHeadParams::from_factors(f).expect("shapes unchanged by cast")
    }

    pub fn is_finite(&self) -> bool {
        self.factors().iter().all(|m| m.is_finite())
    }
}

fn split<T: Scalar>(l: &mut LoRaLayer<T>) -> (&mut Matrix<T>, &mut Matrix<T>) {
    l.factors_mut()
}

impl<T> ParamCount for SiameseHeadParams<T> {
    fn param_count(&self) -> usize {
        self.fc_lora_1.param_count()
            + self.fc_lora_2.param_count()
            + self.similarity_lora.param_count()
    }
}

/// Intermediates of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub x1: Matrix<T>,
    pub x2: Matrix<T>,
    pub xa1: Matrix<T>,
    pub xa2: Matrix<T>,
    pub u1: Matrix<T>,
    pub u2: Matrix<T>,
    /// `|u1 − u2|`
    pub d: Matrix<T>,
    /// `sign(u1 − u2)` with `sign(0) = 0`
    pub sign: Matrix<T>,
    /// `d · A_s`
    pub da_s: Matrix<T>,
    pub logit: Matrix<T>,
    pub p: Matrix<T>,
}

/// Gradients for the six factors, same order as [`SiameseHeadParams::factors`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<T> {
    pub a1: Matrix<T>,
    pub b1: Matrix<T>,
    pub a2: Matrix<T>,
    pub b2: Matrix<T>,
    pub a_s: Matrix<T>,
    pub b_s: Matrix<T>,
}

impl<T: Scalar> HeadGrads<T> {
    pub fn as_array(&self) -> [&Matrix<T>; 6] {
        [&self.a1, &self.b1, &self.a2, &self.b2, &self.a_s, &self.b_s]
    }

    pub fn from_array(g: [Matrix<T>; 6]) -> Self {
        let [a1, b1, a2, b2, a_s, b_s] = g;
        Self {
            a1,
            b1,
            a2,
            b2,
            a_s,
            b_s,
        }
    }
}

fn check_pair<T: Scalar>(f: usize, x1: &Matrix<T>, x2: &Matrix<T>) -> Result<()> {
    if x1.shape() != x2.shape() {
        return Err(Error::dim(
            "head_forward",
            format!("x1 is {:?}, x2 is {:?}", x1.shape(), x2.shape()),
        ));
    }
    if x1.cols() != f {
        return Err(Error::dim(
            "head_forward",
            format!("inputs have {} features, head expects {f}", x1.cols()),
        ));
    }
    Ok(())
}

/// Batched forward pass; returns similarity probabilities `p: n×1`.
pub fn head_forward<T: Scalar>(
    params: &SiameseHeadParams<T>,
    x1: &Matrix<T>,
    x2: &Matrix<T>,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    check_pair(params.feature_dim(), x1, x2)?;
    let (xa1, u1) = params.fc_lora_1.forward_parts(x1)?;
    let (xa2, u2) = params.fc_lora_2.forward_parts(x2)?;
    let diff = u1.zip_map(&u2, |a, b| a - b)?;
    let d = diff.map(Scalar::abs);
    let sign = diff.map(Scalar::signum0);
    let (da_s, logit) = params.similarity_lora.forward_parts(&d)?;
    let p = logit.map(sigmoid);
    let cache = ForwardCache {
        x1: x1.clone(),
        x2: x2.clone(),
        xa1,
        xa2,
        u1,
        u2,
        d,
        sign,
        da_s,
        logit,
        p: p.clone(),
    };
    Ok((p, cache))
}

/// Similarity probabilities only.
pub fn head_predict_proba<T: Scalar>(
    params: &SiameseHeadParams<T>,
    x1: &Matrix<T>,
    x2: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_pair(params.feature_dim(), x1, x2)?;
    let u1 = params.fc_lora_1.forward(x1)?;
    let u2 = params.fc_lora_2.forward(x2)?;
    let d = u1.zip_map(&u2, |a, b| (a - b).abs())?;
    Ok(params.similarity_lora.forward(&d)?.map(sigmoid))
}

/// Gradients of the mean binary cross-entropy over the batch.
///
/// Sigmoid and BCE are fused: `∂L/∂s = (p − y)/n`.
pub fn head_backward<T: Scalar>(
    params: &SiameseHeadParams<T>,
    cache: &ForwardCache<T>,
    y: &Matrix<T>,
) -> Result<HeadGrads<T>> {
    let n = cache.p.rows();
    if y.shape() != (n, 1) {
        return Err(Error::dim(
            "head_backward",
            format!("labels are {:?}, expected ({n}, 1)", y.shape()),
        ));
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let g_logit = cache.p.zip_map(y, |p, y| (p - y) * inv_n)?;

    let (a_s, b_s, g_d) =
        params
            .similarity_lora
            .backward_parts(&cache.d, &cache.da_s, &g_logit, true)?;
    let g_d = g_d.expect("requested");
    let g_u1 = g_d.zip_map(&cache.sign, |g, s| g * s)?;
    let g_u2 = g_u1.map(|v| -v);

    let (a1, b1, _) = params
        .fc_lora_1
        .backward_parts(&cache.x1, &cache.xa1, &g_u1, false)?;
    let (a2, b2, _) = params
        .fc_lora_2
        .backward_parts(&cache.x2, &cache.xa2, &g_u2, false)?;
    Ok(HeadGrads {
        a1,
        b1,
        a2,
        b2,
        a_s,
        b_s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Same,
    Different,
}

/// Threshold probabilities; ties go to [`Verdict::Same`].
pub fn predict<T: Scalar>(p: &Matrix<T>, threshold: f64) -> Vec<Verdict> {
    p.as_slice()
        .iter()
        .map(|&v| {
            if v.to_f64() >= threshold {
                Verdict::Same
            } else {
                Verdict::Different
            }
        })
        .collect()
}

/// Full-rank counterpart of [`SiameseHeadParams`], used for cost baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHeadParams<T> {
    pub fc_1: DenseLayer<T>,
    pub fc_2: DenseLayer<T>,
    pub similarity: DenseLayer<T>,
}

impl<T: Scalar> DenseHeadParams<T> {
    pub fn init(feature_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            fc_1: DenseLayer::init(feature_dim, embed_dim, derive_seed(seed, &[1]))?,
            fc_2: DenseLayer::init(feature_dim, embed_dim, derive_seed(seed, &[2]))?,
            similarity: DenseLayer::init(embed_dim, 1, derive_seed(seed, &[3]))?,
        })
    }

    pub fn from_weights(w: [Matrix<T>; 3]) -> Result<Self> {
        let [w1, w2, ws] = w;
        if w1.shape() != w2.shape() || ws.shape() != (w1.cols(), 1) {
            return Err(Error::dim(
                "DenseHeadParams::from_weights",
                format!("{:?} {:?} {:?}", w1.shape(), w2.shape(), ws.shape()),
            ));
        }
        Ok(Self {
            fc_1: DenseLayer::new(w1)?,
            fc_2: DenseLayer::new(w2)?,
            similarity: DenseLayer::new(ws)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fc_1.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.fc_1.out_dim()
    }

    pub fn weights(&self) -> [&Matrix<T>; 3] {
        [
            self.fc_1.weight(),
            self.fc_2.weight(),
            self.similarity.weight(),
        ]
    }

    pub fn forward(&self, x1: &Matrix<T>, x2: &Matrix<T>) -> Result<Matrix<T>> {
        check_pair(self.feature_dim(), x1, x2)?;
        let u1 = self.fc_1.forward(x1)?;
        let u2 = self.fc_2.forward(x2)?;
        let d = u1.zip_map(&u2, |a, b| (a - b).abs())?;
        Ok(self.similarity.forward(&d)?.map(sigmoid))
    }
}

impl<T> ParamCount for DenseHeadParams<T> {
    fn param_count(&self) -> usize {
        self.fc_1.param_count() + self.fc_2.param_count() + self.similarity.param_count()
    }
}
