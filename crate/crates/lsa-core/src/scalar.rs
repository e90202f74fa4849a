//! Floating-point abstraction the numeric core is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type for simulator features, learner math, and scheduler math.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal or config value.
    fn fl(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any supported scalar")
    }

    /// Lossless round trip through `f64` for f32/f64; used by checkpoints.
    fn to_f64_exact(self) -> f64 {
        self.to_f64().expect("supported scalars embed in f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_identity() {
        let xs = [0.0f64, -1.5, 7e-5, f64::MAX, f64::MIN_POSITIVE];
        for &x in &xs {
            assert_eq!(f64::fl(x.to_f64_exact()).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn f32_round_trip_is_identity() {
        let xs = [0.0f32, -1.5, 0.1, f32::MAX];
        for &x in &xs {
            assert_eq!(f32::fl(x.to_f64_exact()).to_bits(), x.to_bits());
        }
    }
}
