//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used by the kernel, linear algebra, sampler and summaries.
///
/// Implemented for `f32` and `f64`. Besides arithmetic it carries the few
/// random variates the sampler needs, so generic code does not have to
/// spell out `rand_distr` bounds at every call site.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals and the two supported types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Uniform variate on `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Gamma variate with the given shape and unit scale.
    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    fn sample_beta<R: Rng + ?Sized>(alpha: Self, beta: Self, rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }

            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
                Gamma::new(shape, 1.0)
                    .expect("gamma shape must be positive")
                    .sample(rng)
            }

            fn sample_beta<R: Rng + ?Sized>(alpha: Self, beta: Self, rng: &mut R) -> Self {
                Beta::new(alpha, beta)
                    .expect("beta shapes must be positive")
                    .sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
