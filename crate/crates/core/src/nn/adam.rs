//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::{ArchDescriptor, ModelParams, ParamBlocks};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamBlocks,
    pub v: ParamBlocks,
    pub step: u64,
}

impl AdamState {
    pub fn new(descriptor: &ArchDescriptor) -> Self {
        AdamState {
            m: ParamBlocks::zeros_like(descriptor),
            v: ParamBlocks::zeros_like(descriptor),
            step: 0,
        }
    }
}

/// One Adam update:
/// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², θ ← θ − δ·m̂/(√v̂ + ε)
/// with bias-corrected m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamBlocks,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((theta, g), (m, v)) in params
        .blocks
        .blocks
        .iter_mut()
        .zip(&grads.blocks)
        .zip(state.m.blocks.iter_mut().zip(state.v.blocks.iter_mut()))
    {
        for i in 0..theta.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchDescriptor;

    fn setup() -> (ModelParams, AdamState) {
        let d = ArchDescriptor::reduced(3);
        let params = ModelParams::init(d.clone(), 0).unwrap();
        let state = AdamState::new(&d);
        (params, state)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut params, mut state) = setup();
        let before = params.blocks.clone();
        let zeros = ParamBlocks::zeros_like(&params.descriptor);
        adam_step(&mut params, &zeros, &mut state, &AdamConfig::default());
        assert_eq!(params.blocks, before);
    }

    #[test]
    fn first_step_matches_hand_calculation() {
        // Scalar case: g = 1, δ = 0.001 → Δθ = −0.001/(1 + 1e-8).
        let (mut params, mut state) = setup();
        let before = params.blocks.blocks[0][0];
        let mut grads = ParamBlocks::zeros_like(&params.descriptor);
        grads.blocks[0][0] = 1.0;
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        let delta = params.blocks.blocks[0][0] - before;
        let expected = -0.001 / (1.0 + 1e-8);
        assert!(
            (delta - expected).abs() < 1e-15,
            "delta {delta} vs {expected}"
        );
    }

    #[test]
    fn identical_gradients_produce_identical_updates() {
        let (mut params, mut state) = setup();
        // Force two entries of different tensors to share value and grad.
        params.blocks.blocks[0][0] = 0.3;
        params.blocks.blocks[2][0] = 0.3;
        let mut grads = ParamBlocks::zeros_like(&params.descriptor);
        grads.blocks[0][0] = -0.7;
        grads.blocks[2][0] = -0.7;
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        assert_eq!(params.blocks.blocks[0][0], params.blocks.blocks[2][0]);
    }

    #[test]
    fn bias_correction_shrinks_over_steps() {
        // With constant gradient the update magnitude approaches δ.
        let (mut params, mut state) = setup();
        let mut grads = ParamBlocks::zeros_like(&params.descriptor);
        grads.blocks[0][0] = 0.5;
        let cfg = AdamConfig::default();
        let mut prev = params.blocks.blocks[0][0];
        for _ in 0..50 {
            adam_step(&mut params, &grads, &mut state, &cfg);
            let step = (params.blocks.blocks[0][0] - prev).abs();
            prev = params.blocks.blocks[0][0];
            assert!(step <= cfg.learning_rate * 1.05);
        }
    }
}
