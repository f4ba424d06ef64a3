//! Floating point abstraction shared by the model, metrics and trainer.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A real scalar the numeric core can run on.
///
/// Implemented for `f32` and `f64`. Parameters and accumulators use the same
/// type, so `f64` is the default everywhere precision matters (finite
/// difference checks, bit-identity of frozen blocks across checkpoints).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless for every value representable in `Self`.
    fn lit(x: f64) -> Self;

    fn from_feature(x: f32) -> Self;

    fn as_f64(self) -> f64;

    /// Little-endian encoding used by checkpoints (always widened to f64).
    fn to_le_f64_bytes(self) -> [u8; 8] {
        self.as_f64().to_le_bytes()
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn from_feature(x: f32) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn from_feature(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
