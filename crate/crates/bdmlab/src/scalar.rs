//! Scalar abstraction for the math core.
//!
//! Kernel, path, action, and solver code is generic over [`Real`] so the same
//! formulas run in `f32` or `f64`. The simulator and estimators are concrete
//! `f64` (event bookkeeping gains nothing from genericity); crate-root type
//! aliases pin the default `f64` instantiations.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the math core.
///
/// Implemented for `f32` and `f64` via the blanket impl. Conversion helpers
/// are total: every finite `f64` rounds to a representable value.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Default + Send + Sync + 'static {
    /// Converts from `f64`, rounding to the nearest representable value.
    fn of(x: f64) -> Self;

    /// Embeds into `f64` (exact for `f32` and `f64`).
    fn as_f64(self) -> f64;
}

impl<T> Real for T
where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Default + Send + Sync + 'static,
{
    #[inline]
    fn of(x: f64) -> Self {
        T::from_f64(x).expect("every f64 rounds into a Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Real embeds into f64")
    }
}
