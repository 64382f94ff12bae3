//! Adaptive-moment gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTraining(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let c = &self.cfg;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = T::of(c.lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            *p -= step * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
        }
    }
}
