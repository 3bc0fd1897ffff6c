//! Floating-point scalar abstraction shared by every numerical routine.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar type the solver is generic over.
///
/// Implemented for `f32` and `f64`. All tolerances in the crate are stated
/// for `f64`; [`Real::tol`] clamps them to a small multiple of machine
/// epsilon so the same code paths stay meaningful in single precision.
pub trait Real: NdFloat + FromPrimitive + ToPrimitive + Default {
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    /// `x` clamped from below to `16 * epsilon`.
    #[inline]
    fn tol(x: f64) -> Self {
        Self::lit(x).max(Self::epsilon() * Self::lit(16.0))
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
