//! Adam with bias correction.
//!
//! Moments are kept in f64 per parameter name; the step counter is shared
//! across the whole [`ParamSet`].

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    /// First moments.
    m: BTreeMap<String, Vec<f64>>,
    /// Second moments.
    u: BTreeMap<String, Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: BTreeMap::new(),
            u: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.u.get(name).map(Vec::as_slice)
    }

    /// One update of every parameter, then clears the gradients. Fails
    /// without touching anything if any parameter lacks a gradient.
    pub fn step<T: Element>(&mut self, params: &ParamSet<T>) -> Result<()> {
        let mut grads = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            let g = p.grad().ok_or_else(|| TensorError::MissingGrad(name.to_string()))?;
            grads.push(g);
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((name, p), g) in params.iter().zip(grads) {
            let n = p.numel();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let u = self.u.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            p.update_data(|data| {
                for i in 0..n {
                    let gi = g[i].widen();
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    u[i] = beta2 * u[i] + (1.0 - beta2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let u_hat = u[i] / bc2;
                    let x = data[i].widen() - lr * m_hat / (u_hat.sqrt() + epsilon);
                    data[i] = T::of(x);
                }
            });
            p.zero_grad();
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Element>(params: &ParamSet<T>, state: &mut AdamState) -> Result<()> {
    state.step(params)
}
