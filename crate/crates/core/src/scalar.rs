//! Floating-point element types.
//!
//! Training runs in `f32`; gradient and oracle checks run in `f64`. The
//! [`Scalar`] trait is deliberately small so that an operation-counting type
//! (see [`crate::cost::Counted`]) can run the real forward pass.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Display
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    /// Short name used in logs and on the command line.
    const NAME: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// Sign with `signum(0) == 0`.
    fn signum0(self) -> Self {
        let z = Self::zero();
        if self > z {
            Self::one()
        } else if self < z {
            -Self::one()
        } else {
            z
        }
    }
}

macro_rules! impl_float {
    ($t:ty, $name:literal) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn zero() -> Self {
                0.0
            }
            #[inline]
            fn one() -> Self {
                1.0
            }
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_float!(f32, "f32");
impl_float!(f64, "f64");

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(s: T) -> T {
    let one = T::one();
    if s >= T::zero() {
        one / (one + (-s).exp())
    } else {
        let e = s.exp();
        e / (one + e)
    }
}
