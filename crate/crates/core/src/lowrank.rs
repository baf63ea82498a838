//! Low-rank factored linear layers and the full-rank baseline.
//!
//! A [`LoRaLayer`] represents the `N×M` weight `W = A·B` with `A: N×k` and
//! `B: k×M`. The factors are the only weights; there is no bias and no frozen
//! base matrix. Forward passes evaluate `(x·A)·B`, never forming `A·B`.

use log::debug;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{gaussian_matrix, rng_from};
use crate::scalar::Scalar;

/// Number of trainable scalars held by a layer.
pub trait ParamCount {
    fn param_count(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoRaLayer<T> {
    a: Matrix<T>,
    b: Matrix<T>,
}

/// Gradients of a scalar loss with respect to a [`LoRaLayer`] and its input.
#[derive(Clone, Debug, PartialEq)]
pub struct LoRaGrads<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub x: Matrix<T>,
}

/// `(dL/dA, dL/dB, dL/dx if requested)`.
type FactorGrads<T> = (Matrix<T>, Matrix<T>, Option<Matrix<T>>);

impl<T: Scalar> LoRaLayer<T> {
    /// Wrap an `(N×k, k×M)` factor pair.
    pub fn new(a: Matrix<T>, b: Matrix<T>) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::dim(
                "LoRaLayer::new",
                format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
            ));
        }
        if a.cols() == 0 || a.rows() == 0 || b.cols() == 0 {
            return Err(Error::dim("LoRaLayer::new", "empty factor"));
        }
        Ok(Self { a, b })
    }

    /// Gaussian initialization: `A ~ N(0, 1/N)`, `B ~ N(0, 1/k)` entrywise.
    ///
    /// Both factors are random because these layers are the model's only
    /// weights; a zero factor would leave the other without gradient.
    pub fn init(in_dim: usize, out_dim: usize, rank: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || rank == 0 {
            return Err(Error::invalid(format!(
                "layer dims must be positive (N={in_dim}, M={out_dim}, k={rank})"
            )));
        }
        if rank > in_dim.min(out_dim) {
            debug!(
                "rank {rank} exceeds min(N={in_dim}, M={out_dim}); the layer is over-parameterized"
            );
        }
        let mut rng = rng_from(seed);
        let a = gaussian_matrix(in_dim, rank, 1.0 / (in_dim as f64).sqrt(), &mut rng);
        let b = gaussian_matrix(rank, out_dim, 1.0 / (rank as f64).sqrt(), &mut rng);
        Ok(Self { a, b })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.a.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.b.cols()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Matrix<T> {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Matrix<T> {
        &mut self.b
    }

    pub fn factors_mut(&mut self) -> (&mut Matrix<T>, &mut Matrix<T>) {
        (&mut self.a, &mut self.b)
    }

    pub fn into_factors(self) -> (Matrix<T>, Matrix<T>) {
        (self.a, self.b)
    }

    fn check_input(&self, x: &Matrix<T>, op: &'static str) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim(
                op,
                format!("input has {} columns, layer expects {}", x.cols(), self.in_dim()),
            ));
        }
        Ok(())
    }

    /// `(x·A)·B` for a batch `x: n×N`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_parts(x)?.1)
    }

    /// Forward pass returning the rank-space activation `x·A` with the output.
    pub fn forward_parts(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check_input(x, "lora_forward")?;
        let xa = x.matmul(&self.a)?;
        let y = xa.matmul(&self.b)?;
        Ok((xa, y))
    }

    /// The dense `N×M` product `A·B`. Diagnostics only.
    pub fn materialize(&self) -> Matrix<T> {
        self.a
            .matmul(&self.b)
            .expect("factor shapes are validated at construction")
    }

    /// Closed-form gradients for upstream gradient `grad_out = ∂L/∂y`:
    /// `∂A = xᵀ·(g·Bᵀ)`, `∂B = (x·A)ᵀ·g`, `∂x = g·Bᵀ·Aᵀ`.
    pub fn backward(&self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<LoRaGrads<T>> {
        self.check_input(x, "lora_backward")?;
        let xa = x.matmul(&self.a)?;
        let (a, b, gx) = self.backward_parts(x, &xa, grad_out, true)?;
        Ok(LoRaGrads {
            a,
            b,
            x: gx.expect("requested"),
        })
    }

    /// Backward pass reusing a cached `x·A`. The input gradient is skipped
    /// unless requested, since frozen features never need it.
    pub(crate) fn backward_parts(
        &self,
        x: &Matrix<T>,
        xa: &Matrix<T>,
        grad_out: &Matrix<T>,
        want_grad_x: bool,
    ) -> Result<FactorGrads<T>> {
        if grad_out.cols() != self.out_dim() || grad_out.rows() != x.rows() {
            return Err(Error::dim(
                "lora_backward",
                format!(
                    "grad_out is {:?}, expected ({}, {})",
                    grad_out.shape(),
                    x.rows(),
                    self.out_dim()
                ),
            ));
        }
        let grad_b = xa.t_matmul(grad_out)?;
        let g_bt = grad_out.matmul_t(&self.b)?;
        let grad_a = x.t_matmul(&g_bt)?;
        let grad_x = if want_grad_x {
            Some(g_bt.matmul_t(&self.a)?)
        } else {
            None
        };
        Ok((grad_a, grad_b, grad_x))
    }
}

impl<T> ParamCount for LoRaLayer<T> {
    fn param_count(&self) -> usize {
        let (n, k) = (self.a.rows(), self.a.cols());
        k * (n + self.b.cols())
    }
}

/// Full-rank `N×M` linear layer used as the no-LoRA baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    w: Matrix<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(w: Matrix<T>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::dim("DenseLayer::new", "empty weight"));
        }
        Ok(Self { w })
    }

    /// `W ~ N(0, 1/N)` entrywise.
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dims must be positive"));
        }
        let mut rng = rng_from(seed);
        Ok(Self {
            w: gaussian_matrix(in_dim, out_dim, 1.0 / (in_dim as f64).sqrt(), &mut rng),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim(
                "dense_forward",
                format!("input has {} columns, layer expects {}", x.cols(), self.in_dim()),
            ));
        }
        x.matmul(&self.w)
    }

    /// Returns `(∂W, ∂x)`.
    pub fn backward(&self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        Ok((x.t_matmul(grad_out)?, grad_out.matmul_t(&self.w)?))
    }
}

impl<T> ParamCount for DenseLayer<T> {
    fn param_count(&self) -> usize {
        self.w.rows() * self.w.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;
    use nalgebra::DMatrix;

    fn layer(a: &[&[f64]], b: &[&[f64]]) -> LoRaLayer<f64> {
        LoRaLayer::new(Matrix::from_rows(a), Matrix::from_rows(b)).unwrap()
    }

    #[test]
    fn forward_small_case() {
        let l = layer(&[&[1.0], &[2.0]], &[&[3.0, 4.0]]);
        let y = l.forward(&Matrix::from_rows(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(y, Matrix::from_rows(&[&[9.0, 12.0]]));
        assert_eq!(l.materialize(), Matrix::from_rows(&[&[3.0, 4.0], &[6.0, 8.0]]));
    }

    #[test]
    fn zero_a_annihilates() {
        let l = LoRaLayer::new(Matrix::<f32>::zeros(3, 2), Matrix::filled(2, 4, 1.5)).unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f32 - 4.0);
        assert!(l.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(l.materialize().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_materialized_product_f32() {
        let l = LoRaLayer::<f32>::init(8, 6, 3, 0).unwrap();
        let mut rng = rng_from(99);
        let x: Matrix<f32> = gaussian_matrix(4, 8, 1.0, &mut rng);
        let factored = l.forward(&x).unwrap();
        let dense = x.matmul(&l.materialize()).unwrap();
        let scale = dense.max_abs();
        for (a, b) in factored.as_slice().iter().zip(dense.as_slice()) {
            assert!(((a - b).abs() as f64) <= 1e-5 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let l = layer(&[&[2.0]], &[&[3.0]]);
        let g = l
            .backward(&Matrix::from_rows(&[&[5.0]]), &Matrix::from_rows(&[&[1.0]]))
            .unwrap();
        assert_eq!(g.a, Matrix::from_rows(&[&[15.0]]));
        assert_eq!(g.b, Matrix::from_rows(&[&[10.0]]));
        assert_eq!(g.x, Matrix::from_rows(&[&[6.0]]));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let l = LoRaLayer::<f64>::init(4, 3, 2, 5).unwrap();
        let x = Matrix::filled(2, 4, 0.5);
        let g = l.backward(&x, &Matrix::zeros(2, 3)).unwrap();
        for m in [&g.a, &g.b, &g.x] {
            assert!(m.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    /// Central differences of ½‖(x·A)·B‖² against the closed form.
    #[test]
    fn gradients_match_finite_differences() {
        let (n, in_dim, out_dim, k) = (3, 5, 4, 2);
        let l = LoRaLayer::<f64>::init(in_dim, out_dim, k, 11).unwrap();
        let mut rng = rng_from(12);
        let x: Matrix<f64> = gaussian_matrix(n, in_dim, 1.0, &mut rng);
        let loss = |a: &Matrix<f64>, b: &Matrix<f64>, x: &Matrix<f64>| -> f64 {
            let y = x.matmul(a).unwrap().matmul(b).unwrap();
            0.5 * y.as_slice().iter().map(|v| v * v).sum::<f64>()
        };
        let y = l.forward(&x).unwrap();
        let g = l.backward(&x, &y).unwrap();
        let h = 1e-5;
        let check = |analytic: &Matrix<f64>, perturb: &dyn Fn(usize, f64) -> f64| {
            for i in 0..analytic.len() {
                let fd = (perturb(i, h) - perturb(i, -h)) / (2.0 * h);
                let an = analytic.as_slice()[i];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "entry {i}: analytic {an}, fd {fd}");
            }
        };
        check(&g.a, &|i, d| {
            let mut a = l.a().clone();
            a.as_mut_slice()[i] += d;
            loss(&a, l.b(), &x)
        });
        check(&g.b, &|i, d| {
            let mut b = l.b().clone();
            b.as_mut_slice()[i] += d;
            loss(l.a(), &b, &x)
        });
        check(&g.x, &|i, d| {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += d;
            loss(l.a(), l.b(), &xp)
        });
    }

    #[test]
    fn materialized_rank_is_bounded_by_k() {
        for seed in 0..5 {
            let l = LoRaLayer::<f64>::init(12, 10, 4, seed).unwrap();
            let w = l.materialize();
            let svd = DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice()).svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for &s in &sv[4..] {
                assert!(s <= 1e-4 * sv[0], "singular values {sv:?}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = LoRaLayer::<f32>::init(16, 8, 4, 3).unwrap();
        let b = LoRaLayer::<f32>::init(16, 8, 4, 3).unwrap();
        let c = LoRaLayer::<f32>::init(16, 8, 4, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_of_a() {
        let l = LoRaLayer::<f64>::init(512, 4, 8, 0).unwrap();
        let vals = l.a().as_slice();
        assert!(vals.len() >= 4096);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let target = 1.0 / 512f64.sqrt();
        assert!((0.8 * target..=1.2 * target).contains(&var.sqrt()));
    }

    #[test]
    fn param_counts() {
        assert_eq!(LoRaLayer::<f32>::init(512, 128, 8, 0).unwrap().param_count(), 5120);
        assert_eq!(DenseLayer::<f32>::init(512, 128, 0).unwrap().param_count(), 65536);
        // k above min(N, M) is allowed and counted as k(N+M)
        assert_eq!(LoRaLayer::<f32>::init(4, 4, 4, 0).unwrap().param_count(), 32);
    }

    #[test]
    fn rejects_bad_shapes() {
        let l = LoRaLayer::<f64>::init(4, 3, 2, 0).unwrap();
        assert!(l.forward(&Matrix::zeros(1, 5)).is_err());
        assert!(l.backward(&Matrix::zeros(1, 4), &Matrix::zeros(1, 2)).is_err());
        assert!(LoRaLayer::new(Matrix::<f64>::zeros(4, 2), Matrix::zeros(3, 3)).is_err());
        assert!(LoRaLayer::<f64>::init(4, 3, 0, 0).is_err());
    }

    #[test]
    fn dense_backward_matches_closed_form() {
        let d = DenseLayer::new(Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -1.0]]);
        assert_eq!(d.forward(&x).unwrap(), Matrix::from_rows(&[&[-2.0, -2.0]]));
        let (gw, gx) = d.backward(&x, &Matrix::from_rows(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(gw, Matrix::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]));
        assert_eq!(gx, Matrix::from_rows(&[&[1.0, 3.0]]));
    }
}
