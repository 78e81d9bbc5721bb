//! Adam with an exponentially decaying per-epoch learning rate.

use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Geometric interpolation from `start` at epoch 0 to `end` at the final
/// epoch: `lr(e) = start · (end / start)^(e / (epochs - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            start: 1e-4,
            end: 1e-6,
            epochs: 300,
        }
    }
}

impl LrSchedule {
    pub fn new(start: f64, end: f64, epochs: usize) -> Self {
        Self { start, end, epochs }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.start;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.start * (self.end / self.start).powf(frac)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for every parameter in a store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| {
                    let [r, c] = params.get(id).shape();
                    Tensor::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Parameters without a gradient entry keep
    /// their value and moments.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) {
        self.step += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let step_size = T::from_f64_lossy(lr / c1);
        let c2_sqrt = T::from_f64_lossy(c2.sqrt());
        let eps = T::from_f64_lossy(self.config.eps);
        let (b1, b2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (id, g) in grads {
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = params.get_mut(*id).data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w -= step_size * *m / ((*v).sqrt() / c2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotone() {
        let s = LrSchedule::new(1e-4, 1e-6, 300);
        assert!((s.lr(0) - 1e-4).abs() < 1e-18);
        assert!((s.lr(299) - 1e-6).abs() < 1e-18);
        for e in 1..300 {
            assert!(s.lr(e) <= s.lr(e - 1));
            assert!(s.lr(e) >= 1e-6 * (1.0 - 1e-12) && s.lr(e) <= 1e-4);
        }
    }

    #[test]
    fn adam_shrinks_quadratic_monotonically() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(1, 1, 1.0));
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut prev = 1.0f64;
        for _ in 0..500 {
            let x = store.get(w).data()[0];
            let grad = Tensor::full(1, 1, 2.0 * x);
            adam.step(&mut store, &[(w, grad)], 1e-3);
            let now = store.get(w).data()[0].abs();
            assert!(now < prev);
            prev = now;
        }
        assert!(prev < 0.6);
    }
}
