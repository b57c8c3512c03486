//! RMSProp with decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            decay: 0.9,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl RmspropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("rmsprop decay {} must lie in (0,1)", self.decay)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("rmsprop epsilon must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Running mean of squared gradients per parameter tensor.
#[derive(Clone, Debug)]
pub struct Rmsprop<T> {
    pub config: RmspropConfig,
    mean_sq: Vec<Tensor<T>>,
}

impl<T: Scalar> Rmsprop<T> {
    pub fn new(config: RmspropConfig, params: &ParamStore<T>) -> Self {
        let mean_sq = params.values().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, mean_sq }
    }

    /// Restores saved running averages; shapes must line up with `params`.
    pub fn with_state(config: RmspropConfig, params: &ParamStore<T>, mean_sq: Vec<Tensor<T>>) -> Result<Self> {
        if mean_sq.len() != params.len() || params.values().zip(&mean_sq).any(|(p, v)| p.shape() != v.shape()) {
            return Err(Error::Data("optimizer state does not match the parameter layout".into()));
        }
        Ok(Self { config, mean_sq })
    }

    pub fn state(&self) -> &[Tensor<T>] {
        &self.mean_sq
    }

    /// `v ← ρv + (1−ρ)g²;  p ← p − lr·g/(√v+ε) − lr·λ·p`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Data(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.values().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("rmsprop_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{}`", params.name(i))));
            }
        }
        let lr = T::lit(self.config.learning_rate);
        let rho = T::lit(self.config.decay);
        let one_minus_rho = T::lit(1.0 - self.config.decay);
        let eps = T::lit(self.config.epsilon);
        let wd = T::lit(self.config.weight_decay);
        for ((p, g), v) in params.values_mut().zip(grads).zip(&mut self.mean_sq) {
            for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = rho * *v + one_minus_rho * g * g;
                *p = *p - lr * g / (v.sqrt() + eps) - lr * wd * *p;
            }
        }
        Ok(())
    }
}
