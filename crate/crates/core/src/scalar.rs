//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating point scalar: `f32` or `f64`.
///
/// Everything numeric in this crate is generic over `Real`; method calls such
/// as `sqrt` or `abs` resolve through [`RealField`].
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug {
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// Lossless widening to `f64` for reporting and export.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trip() {
        assert_eq!(<f64 as Real>::lit(0.5), 0.5);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert!(!<f64 as Real>::lit(f64::INFINITY).is_finite_value());
    }
}
