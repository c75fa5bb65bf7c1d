//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All core math is written against [`Scalar`], which `f32` and `f64` both
//! satisfy. The concrete aliases at the crate root pick `f64`, which is what
//! the pipeline and the tolerance-bearing tests use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating point number usable by the spectral pipeline.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal is representable")
    }

    /// Lossy conversion from a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Two-pass population mean and standard deviation.
///
/// Returns `None` for an empty input.
pub fn mean_std<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> Option<(T, T)> {
    let mut n = 0usize;
    let mut sum = T::zero();
    for x in xs.clone() {
        sum += x;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / T::count(n);
    let mut ss = T::zero();
    for x in xs {
        let d = x - mean;
        ss += d * d;
    }
    Some((mean, (ss / T::count(n)).sqrt()))
}
