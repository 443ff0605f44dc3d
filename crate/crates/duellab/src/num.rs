//! Scalar abstraction for the numeric core.
//!
//! Everything numeric (tensors, materials, lab drivers, calibration, scoring,
//! the policy/value net) is generic over [`Float`] so it can run at `f32` or
//! `f64`. End-to-end runs use the crate-root alias [`crate::Real`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable throughout the numeric core.
///
/// A thin extension of `num_traits::Float` with the conversions and bounds the
/// rest of the crate needs (literals, serde, threading).
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal into `Self`.
    ///
    /// Panics if the value is not representable; only use with finite
    /// compile-time constants.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal must be representable")
    }

    /// Widen to `f64` (exact for both supported scalars).
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar must widen to f64")
    }
}

impl Float for f32 {}
impl Float for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25_f32);
        assert_eq!(f64::lit(1e-4).as_f64(), 1e-4);
    }

    #[test]
    fn f32_literals_round_to_nearest() {
        // 0.1 is inexact in both widths; lit() goes through the f64 value.
        assert_eq!(f32::lit(0.1), 0.1_f32);
    }
}
