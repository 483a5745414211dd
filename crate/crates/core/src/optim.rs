//! RMSProp-with-momentum and Adam over a [`ParamStore`].

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    RmsProp { decay: f64, momentum: f64 },
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub const fn rmsprop() -> Self {
        OptimizerConfig { kind: OptimizerKind::RmsProp { decay: 0.9, momentum: 0.9 }, learning_rate: 0.01, epsilon: 1e-10 }
    }

    pub const fn adam() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 }, learning_rate: 0.001, epsilon: 1e-8 }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// Per-parameter accumulators, created on a parameter's first update.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    /// rmsprop: (mean square, momentum); adam: (first, second moment)
    slots: HashMap<String, (Vec<T>, Vec<T>)>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !(config.epsilon > 0.0) {
            return Err(CoreError::invalid(format!("optimizer needs positive learning rate and epsilon: {config:?}")));
        }
        Ok(Optimizer { config, slots: HashMap::new(), steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn slot(&self, name: &str) -> Option<(&[T], &[T])> {
        self.slots.get(name).map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    /// One update of every trainable parameter. Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let names: Vec<String> = store.trainable_names().map(str::to_string).collect();
        if let Some(missing) = names.iter().find(|n| store.get(n).map(|t| t.grad().is_none()).unwrap_or(true)) {
            return Err(CoreError::MissingGradient(missing.clone()));
        }
        self.steps += 1;
        let lr = T::lit(self.config.learning_rate);
        let eps = T::lit(self.config.epsilon);
        for name in names {
            let param = store.get_mut(&name)?;
            let grad = param.grad().expect("checked above").to_vec();
            let n = grad.len();
            let (a, b) = self.slots.entry(name).or_insert_with(|| match self.config.kind {
                // Mean square starts at one, so early steps are bounded by lr * |g|.
                OptimizerKind::RmsProp { .. } => (vec![T::one(); n], vec![T::zero(); n]),
                OptimizerKind::Adam { .. } => (vec![T::zero(); n], vec![T::zero(); n]),
            });
            let data = param.data_mut();
            match self.config.kind {
                OptimizerKind::RmsProp { decay, momentum } => {
                    let (rho, mu) = (T::lit(decay), T::lit(momentum));
                    for i in 0..n {
                        let g = grad[i];
                        a[i] = rho * a[i] + (T::one() - rho) * g * g;
                        b[i] = mu * b[i] + lr * g / (a[i] + eps).sqrt();
                        data[i] -= b[i];
                    }
                }
                OptimizerKind::Adam { beta1, beta2 } => {
                    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                    let c1 = T::one() - T::lit(beta1.powi(self.steps as i32));
                    let c2 = T::one() - T::lit(beta2.powi(self.steps as i32));
                    for i in 0..n {
                        let g = grad[i];
                        a[i] = b1 * a[i] + (T::one() - b1) * g;
                        b[i] = b2 * b[i] + (T::one() - b2) * g * g;
                        let mhat = a[i] / c1;
                        let vhat = b[i] / c2;
                        data[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
