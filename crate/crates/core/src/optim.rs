//! Adam with bias correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("adam step counter must start at 1 (bias correction divides by 1 - beta^t)")]
    ZeroStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies update `t` (1-based) to every parameter, then zeroes the grads.
    pub fn step<T: Scalar>(&self, params: &mut ParamStore<T>, t: u64) -> Result<(), OptimError> {
        if t == 0 {
            return Err(OptimError::ZeroStep);
        }
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - self.beta1.powi(t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(t as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for e in params.entries_mut() {
            let value = e.value.data_mut();
            let grad = e.grad.data_mut();
            let m = e.m.data_mut();
            let v = e.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
                grad[i] = T::zero();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn store(value: f32, grad: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.add("p", Matrix::filled(1, 3, value)).unwrap();
        s.entry_mut(id).grad = Matrix::filled(1, 3, grad);
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(1.5, 0.0);
        Adam::default().step(&mut s, 1).unwrap();
        assert!(s.iter().all(|(_, e)| e.value.data().iter().all(|&x| x == 1.5)));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0, 0.37);
        let adam = Adam::with_lr(1e-3);
        adam.step(&mut s, 1).unwrap();
        for (_, e) in s.iter() {
            for &x in e.value.data() {
                // m_hat = g, v_hat = g^2 → step = lr * g / (|g| + eps)
                let expected = -1e-3 * 0.37 / (0.37 + 1e-8);
                assert!((x as f64 - expected).abs() < 1e-5 * 1e-3, "{x} vs {expected}");
            }
            assert!(e.grad.data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_lr_is_identity_and_step_zero_rejected() {
        let mut s = store(2.0, 5.0);
        Adam::with_lr(0.0).step(&mut s, 1).unwrap();
        assert!(s.iter().all(|(_, e)| e.value.data().iter().all(|&x| x == 2.0)));
        assert_eq!(Adam::default().step(&mut s, 0), Err(OptimError::ZeroStep));
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut s = store(0.25, 0.0);
            let adam = Adam::default();
            for t in 1..=20u64 {
                let id = s.id("p").unwrap();
                let g = s.value(id).map(|x| 2.0 * x - 0.1 * t as f32);
                s.entry_mut(id).grad = g;
                adam.step(&mut s, t).unwrap();
            }
            s.value(s.id("p").unwrap()).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
