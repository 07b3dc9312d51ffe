//! Adam with global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::matrix::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    /// Clips `grads` to global norm `max_grad_norm` (skipped when it is not
    /// positive and finite), then applies one bias-corrected Adam descent
    /// step to `params`.
    pub fn step(&mut self, params: &mut [T], grads: &[T], max_grad_norm: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam state has {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let scale = clip_scale(grads, max_grad_norm);
        self.t += 1;
        let t = self.t as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = g * scale;
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Multiplier that brings `grads` to at most `max_norm` in L2 norm.
pub fn clip_scale<T: Real>(grads: &[T], max_norm: T) -> T {
    if !(max_norm > T::zero()) || !max_norm.is_finite() {
        return T::one();
    }
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm {
        max_norm / norm
    } else {
        T::one()
    }
}
