use alloc::vec::Vec;

use num_traits::Float;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient, added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

/// Adam with bias correction. Moments are kept per store entry so their
/// shapes always match the parameter they track.
#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |id: ParamId| store.is_trainable(id).then(|| Tensor::zeros(store.get(id).shape()));
        Self { config, first: store.ids().map(zeros).collect(), second: store.ids().map(zeros).collect(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.name(*id).into()));
            }
            if g.shape() != store.get(*id).shape() {
                return Err(Error::shape("adam_step", alloc::format!("gradient for {}", store.name(*id))));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let (lr, eps, wd) = (T::of(lr), T::of(c.eps), T::of(c.weight_decay));
        for (id, g) in grads {
            let (Some(m), Some(v)) = (self.first[id.index()].as_mut(), self.second[id.index()].as_mut()) else {
                continue;
            };
            let p = store.get_mut(*id);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gv = gv + wd * *pv;
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (Float::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}

/// Constant learning rate for the first two thirds of training, then an
/// exponential decay reaching `0.001 * base` at `total_epochs`.
pub fn lr_at_epoch(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    let t0 = 2 * total_epochs / 3;
    if epoch < t0 || total_epochs == t0 {
        return base;
    }
    let frac = (epoch - t0) as f64 / (total_epochs - t0) as f64;
    base * Float::powf(0.001, frac)
}
