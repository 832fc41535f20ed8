//! Scalar abstraction shared by every numeric module.
//!
//! Everything that does linear algebra is written against [`Real`], which is
//! satisfied by `f32` and `f64`. Tolerances quoted for double precision are
//! widened automatically for single precision through [`tolerance`].

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    <T as FromPrimitive>::from_f64(v).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn lit_usize<T: Real>(v: usize) -> T {
    <T as FromPrimitive>::from_usize(v).expect("usize representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    <T as ToPrimitive>::to_f64(&v).unwrap_or(f64::NAN)
}

/// A double-precision tolerance, floored at a few thousand ulps of `T`.
#[inline]
pub fn tolerance<T: Real>(tol64: f64) -> T {
    let eps = to_f64(T::default_epsilon());
    lit(tol64.max(eps * 1e3))
}

/// Masses below this are treated as exact zeros.
pub const ZERO_MASS: f64 = 1e-14;

#[inline]
pub(crate) fn is_zero_mass<T: Real>(v: T) -> bool {
    v < lit(ZERO_MASS)
}
