use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Moment buffers persist across steps.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update over every parameter. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGrad { name: p.name.clone() });
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, wd, eps) = (T::one(), T::lit(c.weight_decay), T::lit(c.eps));
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.as_ref().unwrap();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g0), mi), vi) in p.value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g0 + wd * *w;
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let denom = (*vi * inv_bc2).sqrt() + eps;
                *w = *w - step_size * *mi / denom;
            }
        }
        Ok(())
    }
}
