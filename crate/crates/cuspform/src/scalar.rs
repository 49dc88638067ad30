//! Scalar abstraction for the precision-agnostic kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumAssign};

/// Floating-point type usable by the generic kernels (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this type.
    fn lit(value: f64) -> Self;

    /// Lossy conversion back to `f64`.
    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_real {
    ($($t:ty),*) => {$(
        impl Real for $t {
            #[inline]
            fn lit(value: f64) -> Self {
                value as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_real!(f32, f64);
