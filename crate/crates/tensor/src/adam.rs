use indexmap::IndexMap;

use crate::params::ParamSet;
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Adam moments, created lazily per parameter name on first step.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|(m, _)| m)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|(_, v)| v)
    }

    /// One bias-corrected Adam update of every parameter from its current gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(p.value.dims()), Tensor::zeros(p.value.dims())));
            let values = p.value.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, g) in p.grad.data().iter().enumerate() {
                let g = g.as_f64();
                let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * g;
                let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * g * g;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                values[i] = T::from_f64(values[i].as_f64() - update);
            }
        }
    }
}
