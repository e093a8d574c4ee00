//! Bias-corrected Adam with global-norm gradient clipping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators, one buffer per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// State for blocks of the given sizes.
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: block_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            second: block_sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// A named, mutable parameter block.
pub struct Block<'a> {
    pub name: &'static str,
    pub values: &'a mut [f64],
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().flatten().map(|g| g * g).sum::<f64>());
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One Adam update over every block. Fails without touching any parameter
/// when a gradient is non-finite, naming the offending block.
pub fn adam_step(blocks: &mut [Block<'_>], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if blocks.len() != grads.len() || blocks.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "{} blocks, {} gradients, {} moment buffers",
            blocks.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (block, grad) in blocks.iter().zip(grads) {
        if block.values.len() != grad.len() {
            return Err(Error::Shape(format!("gradient length mismatch in block {}", block.name)));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter block {}", block.name)));
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - libm::pow(beta1, state.step as f64);
    let c2 = 1.0 - libm::pow(beta2, state.step as f64);
    for (b, (block, grad)) in blocks.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[b], &mut state.second[b]);
        for i in 0..grad.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            block.values[i] -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(param: &mut [f64], grad: f64, steps: usize) -> (AdamState, f64) {
        let mut state = AdamState::new(AdamConfig::default(), &[param.len()]);
        let mut last = 0.0;
        for _ in 0..steps {
            let before = param[0];
            let mut blocks = [Block { name: "p", values: param }];
            adam_step(&mut blocks, &[vec![grad; 1]], &mut state).unwrap();
            last = param[0] - before;
        }
        (state, last)
    }

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut p = [0.7];
        let (state, _) = run(&mut p, 0.0, 3);
        assert_eq!(p, [0.7]);
        assert_eq!(state.step(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = [0.0];
        run(&mut p, 1.0, 1);
        // m_hat = 1, v_hat = 1 -> step lr / (1 + eps)
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut p = [0.0];
        let (_, last) = run(&mut p, -0.3, 2000);
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut p = [0.0];
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut blocks = [Block { name: "w_h", values: &mut p }];
        let err = adam_step(&mut blocks, &[vec![f64::NAN]], &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("w_h")));
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![vec![30.0, 0.0], vec![40.0]];
        let norm = clip_global_norm(&mut g, 10.0);
        assert_eq!(norm, 50.0);
        assert!((g[0][0] - 6.0).abs() < 1e-12 && (g[1][0] - 8.0).abs() < 1e-12);
        let mut small = vec![vec![1.0]];
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small[0][0], 1.0);
    }
}
