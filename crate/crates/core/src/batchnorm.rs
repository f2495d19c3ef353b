//! Batch normalizing transform with per-timestep and sequencewise statistics.
//!
//! Training normalizes with the statistics of the current minibatch, recorded
//! on the tape so gradients flow through the mean and variance. Inference
//! uses [`PopulationStats`]: one running estimate per timestep `1..=t_max`,
//! where timesteps past `t_max` reuse slot `t_max`. In sequencewise mode a
//! single slot is shared by every timestep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{column_means, column_vars, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Scale, optional shift and variance regularizer.
///
/// `beta == None` means the shift parameter does not exist, which is how the
/// recurrent and input normalizers of the BN-LSTM are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Option<Tensor>,
    pub epsilon: f64,
}

impl BnParams {
    pub fn new(dim: usize, gamma: f64, beta: Option<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(BnParams {
            gamma: Tensor::full(&[dim], gamma),
            beta: beta.map(|b| Tensor::full(&[dim], b)),
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundBn {
        BoundBn {
            gamma: tape.leaf(self.gamma.clone()),
            beta: self.beta.as_ref().map(|b| tape.leaf(b.clone())),
            epsilon: self.epsilon,
        }
    }
}

/// [`BnParams`] registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundBn {
    pub gamma: Var,
    pub beta: Option<Var>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl BatchStats {
    /// Statistics of a `[batch × d]` matrix over its rows (biased variance).
    pub fn of(h: &Tensor) -> Result<Self> {
        let [m, d] = h.dims2("BatchStats::of")?;
        if m == 0 {
            return Err(Error::EmptyAxis { op: "BatchStats::of" });
        }
        let mean = column_means(h.data(), m, d);
        let var = column_vars(h.data(), &mean, m, d);
        Ok(BatchStats {
            mean: Tensor::vector(mean),
            var: Tensor::vector(var),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    PerTimestep,
    Sequencewise,
}

/// How minibatch estimates are folded into a population slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopEstimator {
    /// Running mean over every update since the last reset.
    Cumulative,
    /// `new = (1 - momentum) * old + momentum * batch`, seeded by the first update.
    Ema { momentum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopSlot {
    pub mean: Tensor,
    pub var: Tensor,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    mode: StatsMode,
    t_max: usize,
    estimator: PopEstimator,
    slots: Vec<PopSlot>,
}

impl PopulationStats {
    pub fn new(dim: usize, t_max: usize, mode: StatsMode, estimator: PopEstimator) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if let PopEstimator::Ema { momentum } = estimator {
            if !(momentum > 0.0 && momentum <= 1.0) {
                return Err(Error::Config(format!("EMA momentum {momentum} outside (0, 1]")));
            }
        }
        let n = match mode {
            StatsMode::PerTimestep => t_max,
            StatsMode::Sequencewise => 1,
        };
        let slots = (0..n)
            .map(|_| PopSlot {
                mean: Tensor::zeros(&[dim]),
                var: Tensor::zeros(&[dim]),
                count: 0,
            })
            .collect();
        Ok(PopulationStats {
            mode,
            t_max,
            estimator,
            slots,
        })
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn estimator(&self) -> PopEstimator {
        self.estimator
    }

    pub fn slots(&self) -> &[PopSlot] {
        &self.slots
    }

    pub fn dim(&self) -> usize {
        self.slots[0].mean.numel()
    }

    /// True once any slot has absorbed at least one minibatch.
    pub fn is_populated(&self) -> bool {
        self.slots.iter().any(|s| s.count > 0)
    }

    fn slot_index(&self, t: usize) -> Result<usize> {
        if t == 0 {
            return Err(Error::TimestepOutOfRange { t, t_max: self.t_max });
        }
        Ok(match self.mode {
            StatsMode::PerTimestep => t.min(self.t_max) - 1,
            StatsMode::Sequencewise => 0,
        })
    }

    /// Folds one minibatch estimate into slot `t`.
    pub fn update(&mut self, t: usize, stats: &BatchStats) -> Result<()> {
        if self.mode == StatsMode::PerTimestep && (t == 0 || t > self.t_max) {
            return Err(Error::TimestepOutOfRange { t, t_max: self.t_max });
        }
        let idx = self.slot_index(t.max(1))?;
        let d = self.dim();
        if stats.mean.shape() != [d] || stats.var.shape() != [d] {
            return Err(Error::shape("update_population", &[d], stats.mean.shape()));
        }
        let estimator = self.estimator;
        let slot = &mut self.slots[idx];
        let weight = match estimator {
            _ if slot.count == 0 => 1.0,
            PopEstimator::Cumulative => 1.0 / (slot.count + 1) as f64,
            PopEstimator::Ema { momentum } => momentum,
        };
        blend(&mut slot.mean, &stats.mean, weight);
        blend(&mut slot.var, &stats.var, weight);
        slot.count += 1;
        Ok(())
    }

    /// Mean and variance used at timestep `t`.
    pub fn stats_for_timestep(&self, t: usize) -> Result<(&Tensor, &Tensor)> {
        if !self.is_populated() {
            return Err(Error::PopulationUnavailable);
        }
        let idx = self.slot_index(t)?;
        let slot = &self.slots[idx];
        if slot.count == 0 {
            return Err(Error::TimestepUnpopulated { t: idx + 1 });
        }
        Ok((&slot.mean, &slot.var))
    }

    /// Clears every slot so accumulation restarts from scratch.
    pub fn reset(&mut self) {
        for s in &mut self.slots {
            s.mean.scale_inplace(0.0);
            s.var.scale_inplace(0.0);
            s.count = 0;
        }
    }

    pub(crate) fn from_parts(
        mode: StatsMode,
        t_max: usize,
        estimator: PopEstimator,
        slots: Vec<PopSlot>,
    ) -> Self {
        PopulationStats {
            mode,
            t_max,
            estimator,
            slots,
        }
    }
}

fn blend(old: &mut Tensor, new: &Tensor, weight: f64) {
    for (o, n) in old.data_mut().iter_mut().zip(new.data()) {
        *o += (n - *o) * weight;
    }
}

pub fn update_population(pop: &mut PopulationStats, t: usize, stats: &BatchStats) -> Result<()> {
    pop.update(t, stats)
}

pub fn stats_for_timestep(pop: &PopulationStats, t: usize) -> Result<(&Tensor, &Tensor)> {
    pop.stats_for_timestep(t)
}

pub fn reset_population(pop: &mut PopulationStats) {
    pop.reset();
}

/// Training-mode transform of a `[batch × d]` value on the tape.
pub fn bn_forward_train(tape: &mut Tape, h: Var, bn: &BoundBn) -> Result<(Var, BatchStats)> {
    let (y, stats) = tape.batch_norm(h, bn.gamma, bn.beta, bn.epsilon)?;
    Ok((
        y,
        BatchStats {
            mean: Tensor::vector(stats.mean),
            var: Tensor::vector(stats.var),
        },
    ))
}

/// Inference-mode transform: a pure function of its arguments.
pub fn bn_forward_infer(
    h: &Tensor,
    params: &BnParams,
    pop: &PopulationStats,
    t: usize,
) -> Result<Tensor> {
    let (mean, var) = pop.stats_for_timestep(t)?;
    let [_, d] = h.dims2("bn_forward_infer")?;
    if d != params.dim() || d != mean.numel() {
        return Err(Error::shape("bn_forward_infer", h.shape(), params.gamma.shape()));
    }
    let (scale, shift) = affine_from_stats(params, mean, var);
    let data = h
        .data()
        .chunks_exact(d)
        .flat_map(|row| (0..d).map(|j| row[j] * scale[j] + shift[j]).collect::<Vec<_>>())
        .collect();
    Tensor::new(h.shape(), data)
}

fn affine_from_stats(params: &BnParams, mean: &Tensor, var: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let g = params.gamma.data();
    let mut scale = Vec::with_capacity(g.len());
    let mut shift = Vec::with_capacity(g.len());
    for j in 0..g.len() {
        let s = g[j] / (var.data()[j] + params.epsilon).sqrt();
        scale.push(s);
        let b = params.beta.as_ref().map_or(0.0, |b| b.data()[j]);
        shift.push(b - mean.data()[j] * s);
    }
    (scale, shift)
}

/// Inference-mode transform recorded on the tape with fixed statistics, so
/// that `gamma` and `beta` still receive gradients.
pub fn bn_infer_on_tape(
    tape: &mut Tape,
    h: Var,
    bn: &BoundBn,
    mean: &Tensor,
    var: &Tensor,
) -> Result<Var> {
    let inv_std = var.map(|v| 1.0 / (v + bn.epsilon).sqrt());
    let mean = tape.leaf(mean.clone());
    let inv_std = tape.leaf(inv_std);
    let centered = tape.sub_rows(h, mean)?;
    let normed = tape.mul_rows(centered, inv_std)?;
    let scaled = tape.mul_rows(normed, bn.gamma)?;
    match bn.beta {
        Some(b) => tape.add_rows(scaled, b),
        None => Ok(scaled),
    }
}
