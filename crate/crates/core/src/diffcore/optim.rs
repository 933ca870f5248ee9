use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Gradient-descent optimizer with per-parameter state.
#[derive(Clone, Debug)]
pub struct Optimizer<T = f32> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate scaled by `lr_scale`, then
    /// zeroes every gradient. A non-finite gradient aborts the step before
    /// any value changes.
    pub fn step_scaled(&mut self, params: &mut ParamStore<T>, lr_scale: f64) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| !p.gradient.all_finite()) {
            return Err(Error::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                let lr = T::from_f64_lossy(lr * lr_scale);
                for p in params.iter_mut() {
                    for (v, &g) in p.value.data_mut().iter_mut().zip(p.gradient.data()) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.first.is_empty() {
                    for (_, p) in params.iter() {
                        self.first.push(Tensor::zeros(p.value.shape()));
                        self.second.push(Tensor::zeros(p.value.shape()));
                    }
                }
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let step_size = T::from_f64_lossy(lr * lr_scale * bc2.sqrt() / bc1);
                let eps = T::from_f64_lossy(eps * bc2.sqrt());
                let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
                for ((p, m), v) in params
                    .iter_mut()
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    let values = p.value.data_mut();
                    let grads = p.gradient.data();
                    let (ms, vs) = (m.data_mut(), v.data_mut());
                    for i in 0..values.len() {
                        let g = grads[i];
                        ms[i] = b1 * ms[i] + one_b1 * g;
                        vs[i] = b2 * vs[i] + one_b2 * g * g;
                        values[i] -= step_size * ms[i] / (vs[i].sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        self.step_scaled(params, 1.0)
    }
}
