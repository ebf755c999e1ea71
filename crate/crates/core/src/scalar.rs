//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric kernels are generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into `Self`, rounding if necessary.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widens to `f64` for interop with f64-only routines.
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
