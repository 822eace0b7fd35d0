//! Floating-point scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the solvers and simulators are generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline(always)]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion from a count.
    #[inline(always)]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Distance between `a` and `b` in units of the last place of `scale`.
///
/// `scale` is the magnitude the comparison is made against; for entries
/// computed from the same terms it is `max(|a|, |b|)`.
pub fn ulps_apart<T: Scalar>(a: T, b: T, scale: T) -> T {
    let scale = scale.abs();
    if scale == T::zero() {
        return if a == b { T::zero() } else { T::infinity() };
    }
    let (m, e, _) = scale.integer_decode();
    // one ulp of `scale`: 2^e with the mantissa normalised to its full width
    let bits = 64 - m.leading_zeros() as i32;
    let ulp = T::lit(2.0).powi(e as i32 + bits - 1) * T::epsilon();
    (a - b).abs() / ulp
}
