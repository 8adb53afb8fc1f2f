//! Adam with an L2 penalty folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::nn::NetParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            l2: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: NetParams<T>,
    v: NetParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &NetParams<T>) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` from `grads` (gradient of the unpenalised loss).
    pub fn step(&mut self, params: &mut NetParams<T>, grads: &NetParams<T>) {
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let l2 = T::of(c.l2);
        let eps = T::of(c.eps);
        let lr_t = T::of(
            c.lr * (1.0 - c.beta2.powi(self.step as i32)).sqrt() / (1.0 - c.beta1.powi(self.step as i32)),
        );
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((w, g), m), v) in tensors {
            ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, g, m, v| {
                let g = *g + l2 * *w;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + eps);
            });
        }
    }
}
