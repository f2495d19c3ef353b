use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[serde(rename = "rmsprop")]
    RmsProp,
    Adam,
}

/// Hyperparameters for every optimizer kind; each kind reads the fields it needs.
///
/// Update rules, with `g` the (clipped) gradient:
///
/// * SGD: `p -= lr * g`
/// * RMSProp: `a = decay * a + (1 - decay) * g²`, `v = momentum * v + lr * g / sqrt(a + stabilizer)`, `p -= v`
/// * Adam: `m = β₁m + (1-β₁)g`, `s = β₂s + (1-β₂)g²`, `p -= lr * m̂ / (sqrt(ŝ) + stabilizer)`
///   with bias-corrected `m̂ = m / (1-β₁ᵗ)`, `ŝ = s / (1-β₂ᵗ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub stabilizer: f64,
}

impl OptimConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::rmsprop(learning_rate)
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::RmsProp,
            learning_rate,
            rmsprop_decay: 0.9,
            rmsprop_momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            stabilizer: 1e-8,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            ..Self::rmsprop(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(unit(self.rmsprop_decay) && unit(self.rmsprop_momentum)) {
            return Err(Error::Config("RMSProp decay and momentum must lie in [0, 1)".into()));
        }
        if !(unit(self.adam_beta1) && unit(self.adam_beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.stabilizer > 0.0) {
            return Err(Error::Config("stabilizer must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub config: OptimConfig,
    pub step_count: u64,
    /// Per parameter: RMSProp `[mean square, velocity]`, Adam `[m, s]`, SGD `[]`.
    pub slots: Vec<Vec<Tensor>>,
}

impl OptimState {
    pub fn new(config: OptimConfig, shapes: &[&[usize]]) -> Result<Self> {
        config.validate()?;
        let per_param = match config.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::RmsProp | OptimizerKind::Adam => 2,
        };
        let slots = shapes
            .iter()
            .map(|s| (0..per_param).map(|_| Tensor::zeros(s)).collect())
            .collect();
        Ok(OptimState {
            config,
            step_count: 0,
            slots,
        })
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.slots.len() {
            return Err(Error::shape("optimizer step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    context: "optimizer gradients".into(),
                });
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        for ((p, g), slots) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let pd = p.data_mut();
            let gd = g.data();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (pk, gk) in pd.iter_mut().zip(gd) {
                        *pk -= c.learning_rate * gk;
                    }
                }
                OptimizerKind::RmsProp => {
                    let (acc, vel) = two_mut(slots);
                    for k in 0..pd.len() {
                        let a = &mut acc[k];
                        *a = c.rmsprop_decay * *a + (1.0 - c.rmsprop_decay) * gd[k] * gd[k];
                        let v = &mut vel[k];
                        *v = c.rmsprop_momentum * *v
                            + c.learning_rate * gd[k] / (*a + c.stabilizer).sqrt();
                        pd[k] -= *v;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, s) = two_mut(slots);
                    let bc1 = 1.0 - c.adam_beta1.powi(t);
                    let bc2 = 1.0 - c.adam_beta2.powi(t);
                    for k in 0..pd.len() {
                        m[k] = c.adam_beta1 * m[k] + (1.0 - c.adam_beta1) * gd[k];
                        s[k] = c.adam_beta2 * s[k] + (1.0 - c.adam_beta2) * gd[k] * gd[k];
                        let mhat = m[k] / bc1;
                        let shat = s[k] / bc2;
                        pd[k] -= c.learning_rate * mhat / (shat.sqrt() + c.stabilizer);
                    }
                }
            }
            if pd.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "optimizer update".into(),
                });
            }
        }
        Ok(())
    }
}

fn two_mut(slots: &mut [Tensor]) -> (&mut [f64], &mut [f64]) {
    let (a, b) = slots.split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: OptimConfig, p0: Vec<f64>, grads: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut p = Tensor::vector(p0);
        let mut st = OptimState::new(config, &[p.shape()]).unwrap();
        grads
            .iter()
            .map(|g| {
                st.step(&mut [&mut p], &[Tensor::vector(g.clone())]).unwrap();
                p.data().to_vec()
            })
            .collect()
    }

    #[test]
    fn sgd_hand_step() {
        let out = run(OptimConfig::sgd(0.1), vec![0.0, 0.0], &[vec![1.0, -2.0]]);
        assert!((out[0][0] + 0.1).abs() < 1e-15);
        assert!((out[0][1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        for g in [1e-3, 0.5, -7.0] {
            let out = run(OptimConfig::adam(0.002), vec![1.0], &[vec![g]]);
            let update = (out[0][0] - 1.0).abs();
            assert!((update - 0.002).abs() < 1e-6, "g={g}: {update}");
        }
    }

    #[test]
    fn rmsprop_second_step_shrinks() {
        let mut cfg = OptimConfig::rmsprop(1e-3);
        cfg.rmsprop_momentum = 0.0;
        let out = run(cfg, vec![0.0], &[vec![1.0], vec![1.0]]);
        let first = out[0][0].abs();
        let second = (out[1][0] - out[0][0]).abs();
        assert!(second < first, "{first} vs {second}");
        // a1 = 0.1, a2 = 0.19
        assert!((first - 1e-3 / (0.1f64 + 1e-8).sqrt()).abs() < 1e-15);
        assert!((second - 1e-3 / (0.19f64 + 1e-8).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn every_kind_descends_a_quadratic() {
        for cfg in [OptimConfig::sgd(1e-3), OptimConfig::rmsprop(1e-3), OptimConfig::adam(1e-3)] {
            let mut p = Tensor::vector(vec![0.7, -1.3, 2.0]);
            let before = p.sq_norm();
            let mut st = OptimState::new(cfg, &[p.shape()]).unwrap();
            let g = p.map(|v| 2.0 * v);
            st.step(&mut [&mut p], &[g]).unwrap();
            assert!(p.sq_norm() < before, "{:?}", cfg.kind);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut st = OptimState::new(OptimConfig::adam(1e-3), &[p.shape()]).unwrap();
        let r = st.step(&mut [&mut p], &[Tensor::vector(vec![f64::INFINITY])]);
        assert!(r.is_err());
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let grads: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        for cfg in [OptimConfig::rmsprop(1e-3), OptimConfig::adam(2e-3)] {
            let a = run(cfg, vec![0.1, 0.2], &grads);
            let b = run(cfg, vec![0.1, 0.2], &grads);
            assert_eq!(a, b);
        }
    }
}
