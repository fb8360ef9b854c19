//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the distribution, scoring and selection code is generic over.
///
/// Implemented for `f32` and `f64`. Special functions (the normal CDF) are evaluated in
/// `f64` and cast back, so `f32` callers get `f32`-rounded results of an `f64` evaluation.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; infallible for the primitive floats.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every supported float")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every supported float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("floats convert to f64")
    }

    /// Standard normal CDF.
    fn norm_cdf(self) -> Self {
        Self::of(0.5 * libm::erfc(-self.as_f64() / std::f64::consts::SQRT_2))
    }

    /// Standard normal density.
    fn norm_pdf(self) -> Self {
        let z = self.as_f64();
        Self::of((-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
    }
}

impl Real for f32 {}
impl Real for f64 {}
