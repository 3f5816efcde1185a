use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::num::Real;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

/// Scalar part of [`Adam`], as stored in weight files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHeader {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl<S: Real> Adam<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn header(&self) -> AdamHeader {
        AdamHeader {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
        }
    }
}

/// One bias-corrected Adam step with learning rate `lr`.
pub fn adam_update<S: Real>(params: &mut ParamStore<S>, grads: &Grads<S>, opt: &mut Adam<S>, lr: f64) {
    opt.step += 1;
    let (b1, b2) = (S::of(opt.beta1), S::of(opt.beta2));
    let c1 = 1.0 - opt.beta1.powi(opt.step as i32);
    let c2 = 1.0 - opt.beta2.powi(opt.step as i32);
    let step = S::of(lr / c1);
    let c2_inv = S::of(1.0 / c2);
    let eps = S::of(opt.eps);
    for (((p, g), m), v) in params.values.iter_mut().zip(grads).zip(&mut opt.m).zip(&mut opt.v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (S::one() - b1) * g[i];
            v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
            p[i] -= step * m[i] / ((v[i] * c2_inv).sqrt() + eps);
        }
    }
}

/// Linear decay `eta_k = eta_{k-1} * (1 - k / K)`.
pub fn lr_for_epoch(prev: f64, k: usize, total: usize) -> f64 {
    prev * (1.0 - k as f64 / total as f64)
}
