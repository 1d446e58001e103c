//! Audio-visual question answering with a parameter-free contextual block,
//! a cross-attention chain and alignment pre-training, on synthetic data.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod contextual;
pub mod dataset_io;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pretrain;
pub mod seed;
pub mod synthetic;
pub mod train;

pub use error::{CadError, Result};
