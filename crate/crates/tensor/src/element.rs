use std::fmt::{Debug, Display};

use num_traits::Float;

/// Scalar storage type of a [`Tensor`](crate::Tensor).
///
/// Kernels widen to `f64` internally and narrow on store, so `f32` tensors
/// get 64-bit accumulation and `f64` tensors are exact to double precision.
pub trait Element: Float + Default + Debug + Display + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn widen(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }
}
