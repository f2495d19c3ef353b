use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Rescale all gradients together when their joint L2 norm exceeds the threshold.
    GlobalNorm,
    /// Rescale each parameter's gradient independently.
    PerParamNorm,
    /// Clamp every element to `[-threshold, threshold]`.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub threshold: f64,
    pub mode: ClipMode,
}

impl ClipConfig {
    pub fn new(threshold: f64, mode: ClipMode) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("clip threshold must be positive, got {threshold}")));
        }
        Ok(ClipConfig { threshold, mode })
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            threshold: 1.0,
            mode: ClipMode::GlobalNorm,
        }
    }
}

/// Clips `grads` in place and returns their global L2 norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], cfg: &ClipConfig) -> Result<f64> {
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite {
            context: "gradients".into(),
        });
    }
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    match cfg.mode {
        ClipMode::GlobalNorm => {
            if norm > cfg.threshold {
                let k = cfg.threshold / norm;
                grads.iter_mut().for_each(|g| g.scale_inplace(k));
            }
        }
        ClipMode::PerParamNorm => {
            for g in grads.iter_mut() {
                let n = g.norm();
                if n > cfg.threshold {
                    g.scale_inplace(cfg.threshold / n);
                }
            }
        }
        ClipMode::Value => {
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v = v.clamp(-cfg.threshold, cfg.threshold);
                }
            }
        }
    }
    Ok(norm)
}
