//! Scalar abstraction shared by every numerical module.
//!
//! All core math is written against [`Real`], which is implemented for `f32`
//! and `f64`. The crate root exposes `f64`/`f32` aliases for the common types.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, Signed, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Signed
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    /// Conversion from a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Hashable bit pattern; `+0` and `-0` map to the same key.
    #[inline]
    fn key_bits(self) -> (u64, i16, i8) {
        if self == Self::zero() {
            Self::zero().integer_decode()
        } else {
            self.integer_decode()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_zero_shares_a_key() {
        assert_eq!(0.0f64.key_bits(), (-0.0f64).key_bits());
        assert_ne!(1.0f64.key_bits(), (-1.0f64).key_bits());
        assert_eq!(0.0f32.key_bits(), (-0.0f32).key_bits());
    }
}
