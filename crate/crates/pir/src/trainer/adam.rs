//! Per-block Adam optimizer with bias correction.

use crate::core::error::{Error, Result};
use crate::fields::ParamBlock;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    /// Apply one bias-corrected update from `block.grads`, then zero the
    /// gradients. Aborts without touching the parameters on a non-finite
    /// gradient.
    pub fn step(&mut self, block: &mut ParamBlock) -> Result<()> {
        assert_eq!(self.m.len(), block.len(), "moment/param shape mismatch");
        if !block.grads_finite() {
            return Err(Error::NonFiniteGradient {
                block: block.name.clone(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..block.len() {
            let g = block.grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            block.values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        block.zero_grads();
        Ok(())
    }

    /// Round moments to f32 (checkpoint precision).
    pub fn snap_to_f32(&mut self) {
        for v in self.m.iter_mut().chain(self.v.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut block = ParamBlock::zeros("b", 4);
        block.values = vec![1.0, -2.0, 3.0, 0.5];
        let before = block.values.clone();
        let mut adam = AdamState::new(4, 1e-3);
        adam.step(&mut block).unwrap();
        assert_eq!(block.values, before);
    }

    #[test]
    fn constant_grad_first_step_is_lr_sized() {
        // bias-corrected Adam moves by ~lr on the first step for any
        // constant gradient magnitude
        for &g in &[1e-4, 0.1, 5.0] {
            let mut block = ParamBlock::zeros("b", 1);
            block.values[0] = 2.0;
            block.grads[0] = g;
            let mut adam = AdamState::new(1, 1e-2);
            adam.step(&mut block).unwrap();
            let delta = (block.values[0] - 2.0).abs();
            assert!((delta - 1e-2).abs() < 1e-5, "step {delta} for grad {g}");
            assert_eq!(block.grads[0], 0.0, "grads must be zeroed");
        }
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut block = ParamBlock::zeros("b", 3);
            block.values = vec![0.3, -0.7, 1.1];
            let mut adam = AdamState::new(3, 1e-2);
            for k in 0..50 {
                for (i, g) in block.grads.iter_mut().enumerate() {
                    *g = ((k * 3 + i) as f64 * 0.37).sin();
                }
                adam.step(&mut block).unwrap();
            }
            block.values
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn non_finite_grad_aborts_with_block_name() {
        let mut block = ParamBlock::zeros("geometry", 2);
        block.grads[1] = f64::NAN;
        let mut adam = AdamState::new(2, 1e-3);
        match adam.step(&mut block) {
            Err(Error::NonFiniteGradient { block }) => assert_eq!(block, "geometry"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
