use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
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

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr())));
        }
        match *self {
            OptimizerConfig::Sgd { momentum, .. } if !(0.0..1.0).contains(&momentum) => Err(
                Error::Config(format!("momentum {momentum} outside [0, 1)")),
            ),
            OptimizerConfig::Adam { beta1, beta2, eps, .. }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                Err(Error::Config("adam betas must be in [0, 1) and eps > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer state sized to one parameter set.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: NetworkParams<T>,
    second: NetworkParams<T>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &NetworkParams<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        })
    }

    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &NetworkParams<T>) {
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                let (lr, mu) = (T::lit(lr), T::lit(momentum));
                for (((_, mut p), (_, g)), (_, mut v)) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.first.tensors_mut())
                {
                    Zip::from(&mut p).and(&g).and(&mut v).for_each(|p, &g, v| {
                        *v = mu * *v + g;
                        *p -= lr * *v;
                    });
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                let step = T::lit(lr * c2.sqrt() / c1);
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps * c2.sqrt()));
                let one = T::one();
                for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.first.tensors_mut())
                    .zip(self.second.tensors_mut())
                {
                    Zip::from(&mut p)
                        .and(&g)
                        .and(&mut m)
                        .and(&mut v)
                        .for_each(|p, &g, m, v| {
                            *m = b1 * *m + (one - b1) * g;
                            *v = b2 * *v + (one - b2) * g * g;
                            *p -= step * *m / (v.sqrt() + eps);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;

    #[test]
    fn sgd_moves_against_gradient() {
        let cfg = NetworkConfig::ws(2, 3, vec![1]);
        let mut p = NetworkParams::<f64>::zeros(&cfg);
        let mut g = p.zeros_like();
        g.age_b[1] = 2.0;
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.5, momentum: 0.0 }, &p).unwrap();
        opt.step(&mut p, &g);
        assert_eq!(p.age_b[1], -1.0);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let cfg = NetworkConfig::ws(2, 3, vec![1]);
        let mut p = NetworkParams::<f64>::zeros(&cfg);
        let mut g = p.zeros_like();
        g.head_b[0] = -0.37;
        let mut opt = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
        opt.step(&mut p, &g);
        assert!((p.head_b[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn bad_learning_rate_rejected() {
        let p = NetworkParams::<f64>::zeros(&NetworkConfig::ws(2, 3, vec![]));
        assert!(Optimizer::new(OptimizerConfig::Sgd { lr: 0.0, momentum: 0.0 }, &p).is_err());
    }
}
