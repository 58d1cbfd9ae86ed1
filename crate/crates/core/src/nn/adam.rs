use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

use super::tensor::Params;
use super::NnError;

/// Adam with bias correction. Defaults: beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, learning_rate: f64) -> Self {
        let m = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let v = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients accumulated in `params`; gradients are
    /// cleared afterwards. Non-finite gradients abort the run.
    pub fn step(&mut self, params: &mut Params) -> Result<(), NnError> {
        params.check_finite_grads()?;
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (ti, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..tensor.len() {
                let g = tensor.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor.values[i] -= self.learning_rate * mhat / (fmath::sqrt(vhat) + self.eps);
                tensor.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
