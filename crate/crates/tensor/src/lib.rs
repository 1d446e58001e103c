//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Storage is generic over [`Element`] (`f32` for training, `f64` for
//! gradient checking); reductions and products accumulate in `f64`. Every
//! kernel is single-threaded, so forward and backward passes are bitwise
//! reproducible for identical inputs.

mod adam;
mod element;
mod error;
pub mod gradcheck;
mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use element::Element;
pub use error::{Result, TensorError};
pub use ops::sigmoid;
pub use params::ParamSet;
pub use tensor::Tensor;
