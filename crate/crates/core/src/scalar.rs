// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar abstraction shared by every weight container and kernel.
//!
//! Weights are stored in `T` (normally `f32`); every reduction (dot
//! products, means, softmax sums) accumulates in `f64` regardless of `T`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a bundle: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Widen to the accumulator type.
    fn acc(self) -> f64;

    /// Narrow from the accumulator type (round to nearest).
    fn from_acc(v: f64) -> Self;

    /// Convert a stored 32-bit value.
    fn widen(v: f32) -> Self;

    /// Narrow to 32 bits for serialization.
    fn narrow(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn acc(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn widen(v: f32) -> Self {
        v
    }
    #[inline]
    fn narrow(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn acc(self) -> f64 {
        self
    }
    #[inline]
    fn from_acc(v: f64) -> Self {
        v
    }
    #[inline]
    fn widen(v: f32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn narrow(self) -> f32 {
        self as f32
    }
}

/// Dot product with a sequential `f64` accumulator.
///
/// The summation order is fixed (index ascending) so results do not depend
/// on how callers block or parallelize the surrounding loops.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.acc() * y.acc();
    }
    acc
}

/// Total order on `f64` placing larger values first and breaking ties by
/// ascending index. `+inf` ranks above every finite value.
#[inline]
pub fn desc_then_index(a: (f64, usize), b: (f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}
