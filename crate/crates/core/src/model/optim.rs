use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{ensure, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Stochastic gradient descent; `momentum = 0` is the plain update.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { momentum: 0.0 }
    }
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Sgd { momentum } => {
                ensure!((0.0..1.0).contains(&momentum), InvalidConfig, "momentum must lie in [0, 1)");
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                ensure!(
                    (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
                    InvalidConfig,
                    "invalid Adam hyper-parameters"
                );
            }
        }
        Ok(())
    }

    /// Names of the per-parameter state slots this optimiser keeps.
    fn slots(&self) -> &'static [&'static str] {
        match self {
            OptimizerConfig::Sgd { momentum } if *momentum == 0.0 => &[],
            OptimizerConfig::Sgd { .. } => &["velocity"],
            OptimizerConfig::Adam { .. } => &["m", "v"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    /// `state[slot][param]`.
    state: Vec<Vec<Vec<T>>>,
    steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[&[T]]) -> Result<Self> {
        config.validate()?;
        let state = config
            .slots()
            .iter()
            .map(|_| params.iter().map(|p| vec![T::zero(); p.len()]).collect())
            .collect();
        Ok(Self {
            config,
            state,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &Gradients<T>, lr: f64) {
        self.steps += 1;
        let lr_t = T::from_f64(lr);
        match self.config {
            OptimizerConfig::Sgd { momentum } if momentum == 0.0 => {
                for (p, g) in params.into_iter().zip(&grads.tensors) {
                    for (w, &d) in p.iter_mut().zip(g) {
                        *w = *w - lr_t * d;
                    }
                }
            }
            OptimizerConfig::Sgd { momentum } => {
                let mu = T::from_f64(momentum);
                for ((p, g), v) in params.into_iter().zip(&grads.tensors).zip(&mut self.state[0]) {
                    for ((w, &d), vel) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vel = mu * *vel + d;
                        *w = *w - lr_t * *vel;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let step = T::from_f64(lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t)));
                let (b1, b2, e) = (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps));
                let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
                let (ms, vs) = self.state.split_at_mut(1);
                for (((p, g), m), v) in params.into_iter().zip(&grads.tensors).zip(&mut ms[0]).zip(&mut vs[0]) {
                    for (((w, &d), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + one_b1 * d;
                        *vi = b2 * *vi + one_b2 * d * d;
                        *w = *w - step * *mi / (vi.sqrt() + e);
                    }
                }
            }
        }
    }

    /// State tensors as `(slot.param_name, values)` pairs.
    pub fn state_tensors(&self, param_names: &[String]) -> Vec<(String, &[T])> {
        self.config
            .slots()
            .iter()
            .zip(&self.state)
            .flat_map(|(slot, tensors)| {
                param_names
                    .iter()
                    .zip(tensors)
                    .map(move |(n, t)| (format!("optim.{slot}.{n}"), t.as_slice()))
            })
            .collect()
    }

    /// Restores state saved by [`Optimizer::state_tensors`].
    pub fn restore(
        &mut self,
        steps: u64,
        param_names: &[String],
        mut lookup: impl FnMut(&str) -> Option<Vec<T>>,
    ) -> Result<()> {
        for (slot, tensors) in self.config.slots().iter().zip(self.state.iter_mut()) {
            for (name, t) in param_names.iter().zip(tensors.iter_mut()) {
                let key = format!("optim.{slot}.{name}");
                let Some(v) = lookup(&key) else {
                    return Err(crate::Error::InvalidInput(format!("optimizer state `{key}` missing")));
                };
                ensure!(v.len() == t.len(), InvalidInput, "optimizer state `{key}` has wrong length");
                *t = v;
            }
        }
        self.steps = steps;
        Ok(())
    }
}
