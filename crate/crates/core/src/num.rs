//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64`. The extra `erf` method backs the exact
/// Gaussian-error-function form of GeLU.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Gauss error function.
    fn gauss_erf(self) -> Self;

    /// Lossy conversion from `f64`, for constants.
    #[inline]
    fn from_f64c(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant converts to any Scalar")
    }
}

impl Scalar for f64 {
    #[inline]
    fn gauss_erf(self) -> Self {
        libm::erf(self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn gauss_erf(self) -> Self {
        // erff is only ~1e-7 accurate; routing through f64 keeps f32 results
        // correctly rounded.
        libm::erf(self as f64) as f32
    }
}
