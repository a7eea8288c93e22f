//! Adam with a moving average of the weights for inference.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; params],
            v: vec![0.0; params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let c = self.config;
        let t = self.steps.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let lr = c.learning_rate * bc2.sqrt() / bc1;
        for i in 0..params.len() {
            let g = grad[i];
            let m = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            let v = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            params[i] -= lr * m / (v.sqrt() + c.epsilon);
        }
    }
}

/// Exponential moving average of a parameter vector, seeded with the initial
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub decay: f32,
    weights: Vec<f32>,
}

impl Ema {
    pub fn new(decay: f32, initial: &[f32]) -> Self {
        Self {
            decay,
            weights: initial.to_vec(),
        }
    }

    pub fn update(&mut self, params: &[f32]) {
        let d = self.decay;
        for (e, &p) in self.weights.iter_mut().zip(params) {
            *e = d * *e + (1.0 - d) * p;
        }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: Vec<f32>) {
        self.weights = w;
    }
}
