//! Diagnostic studies: gradient flow against `γ`, the expected tanh
//! derivative, population statistic traces, length generalization, and
//! `γ` sweeps.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recurrent::Phase;
use crate::tape::Tape;
use crate::tasks::{CharCorpus, Metrics, Split};

use super::config::ExperimentConfig;
use super::data::{segments, TaskData};
use super::model::Model;
use super::train::{train_on, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradFlowRow {
    pub gamma: f64,
    pub t: usize,
    pub grad_norm: f64,
}

/// For every `γ`, one training-phase forward and backward pass of a fresh
/// model on the first minibatch, recording `‖∂L/∂h_t‖` at each timestep.
///
/// Both `γ_h` and `γ_x` start at the grid value; every other parameter,
/// the batch and the initial-state noise are shared across the grid.
/// Non-finite norms are reported, not raised.
pub fn grad_flow_sweep(
    cfg: &ExperimentConfig,
    data: &TaskData,
    gamma_grid: &[f64],
    loss_scale: f64,
) -> Result<Vec<GradFlowRow>> {
    if let Some(g) = gamma_grid.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Config(format!("gamma values must be positive, got {g}")));
    }
    let source = data.train_epoch(cfg.data_seed)?;
    let source = source.get();
    let mut order: Vec<usize> = (0..source.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(cfg.data_seed));
    if order.len() < cfg.batch_size {
        return Err(Error::Config("not enough examples for one batch".into()));
    }
    let batch = source.batch(&order[..cfg.batch_size])?;

    let mut rows = Vec::new();
    for &gamma in gamma_grid {
        let mut c = cfg.clone();
        c.gamma_init = gamma;
        let model = Model::new(&c, data.input_dim(), data.classes(), data.steps())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, source.per_step_targets(), Phase::Train, cfg.noise_std, &mut rng, 0)?;
        let loss = tape.scale(fwd.loss, loss_scale);
        let grads = tape.backward(loss)?;
        for (k, s) in fwd.unrolled.states.iter().enumerate() {
            rows.push(GradFlowRow {
                gamma,
                t: k + 1,
                grad_norm: grads.wrt(s.h).norm(),
            });
        }
    }
    Ok(rows)
}

/// `‖g_1‖ / ‖g_T‖` for one `γ` of a sweep.
pub fn decay_ratio(rows: &[GradFlowRow], gamma: f64) -> Option<f64> {
    let series: Vec<&GradFlowRow> = rows.iter().filter(|r| r.gamma == gamma).collect();
    let first = series.iter().find(|r| r.t == 1)?;
    let last = series.iter().max_by_key(|r| r.t)?;
    Some(first.grad_norm / last.grad_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanhRow {
    pub sigma: f64,
    pub mean_derivative: f64,
    pub std_error: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Monte-Carlo estimate of `E[1 − tanh²(x)]`, `x ~ N(0, σ²)`, with the same
/// standard-normal draws scaled by every `σ`.
pub fn tanh_derivative_study(sigma_grid: &[f64], samples: usize, seed: u64) -> Result<Vec<TanhRow>> {
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    if let Some(s) = sigma_grid.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::Config(format!("sigma must be nonnegative, got {s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = samples as f64;
    Ok(sigma_grid
        .iter()
        .map(|&sigma| {
            let mut d: Vec<f64> = z.iter().map(|z| 1.0 - (sigma * z).tanh().powi(2)).collect();
            let mean = d.iter().sum::<f64>() / n;
            let var = if samples > 1 {
                d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            d.sort_by(f64::total_cmp);
            TanhRow {
                sigma,
                mean_derivative: mean,
                std_error: (var / n).sqrt(),
                q25: quantile(&d, 0.25),
                q75: quantile(&d, 0.75),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopTraceRow {
    pub normalizer: String,
    pub unit: usize,
    pub t: usize,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopTrace {
    pub rows: Vec<PopTraceRow>,
    /// `(normalizer, unit)` pairs whose variance is zero at every timestep.
    pub degenerate: Vec<(String, usize)>,
}

impl PopTrace {
    /// Per-timestep values of one unit, in timestep order.
    pub fn series(&self, normalizer: &str, unit: usize, var: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.normalizer == normalizer && r.unit == unit)
            .map(|r| if var { r.var } else { r.mean })
            .collect()
    }

    pub fn units(&self, normalizer: &str) -> Vec<usize> {
        let mut u: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.normalizer == normalizer)
            .map(|r| r.unit)
            .collect();
        u.dedup();
        u
    }
}

/// Largest step-to-step change over the last quarter of `trace`, relative
/// to the trace's total range; `None` for a flat trace.
pub fn late_change_ratio(trace: &[f64]) -> Option<f64> {
    if trace.len() < 2 {
        return None;
    }
    let lo = trace.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return None;
    }
    let start = (trace.len() * 3 / 4).max(1);
    let step = (start..trace.len())
        .map(|t| (trace[t] - trace[t - 1]).abs())
        .fold(0.0, f64::max);
    Some(step / range)
}

const FLAT_VARIANCE: f64 = 1e-12;

/// Population mean and variance at every timestep `1..=T_max` for a seeded
/// sample of units of each normalizer.
pub fn popstat_trace(model: &Model, units_sample: usize, seed: u64) -> Result<PopTrace> {
    let pops = model.cell.populations();
    if pops.is_empty() {
        return Err(Error::PopulationUnavailable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut degenerate = Vec::new();
    for (name, pop) in pops {
        let dim = pop.dim();
        let mut units = sample(&mut rng, dim, units_sample.min(dim)).into_vec();
        units.sort_unstable();
        let steps = match pop.mode() {
            crate::batchnorm::StatsMode::PerTimestep => pop.t_max(),
            crate::batchnorm::StatsMode::Sequencewise => 1,
        };
        let mut flat = vec![true; units.len()];
        for t in 1..=steps {
            let (mean, var) = pop.stats_for_timestep(t)?;
            for (k, &u) in units.iter().enumerate() {
                flat[k] &= var.data()[u] <= FLAT_VARIANCE;
                rows.push(PopTraceRow {
                    normalizer: name.to_string(),
                    unit: u,
                    t,
                    mean: mean.data()[u],
                    var: var.data()[u],
                });
            }
        }
        degenerate.extend(units.iter().zip(flat).filter(|(_, f)| *f).map(|(u, _)| (name.to_string(), *u)));
    }
    rows.sort_by(|a, b| (a.normalizer.as_str(), a.unit, a.t).cmp(&(b.normalizer.as_str(), b.unit, b.t)));
    Ok(PopTrace { rows, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub length: usize,
    pub bpc: f64,
    pub cross_entropy: f64,
    pub windows: usize,
}

/// Inference-phase evaluation of `split` cut into windows of each length.
pub fn eval_lengths(
    model: &Model,
    corpus: &CharCorpus,
    lengths: &[usize],
    split: Split,
    batch_size: usize,
) -> Result<Vec<LengthRow>> {
    lengths
        .iter()
        .map(|&length| {
            if length == 0 {
                return Err(Error::Config("lengths must be at least 1".into()));
            }
            let set = segments(corpus, split, length)?;
            let m: Metrics = model.evaluate(&set, batch_size)?;
            Ok(LengthRow {
                length,
                bpc: m.bits_per_character,
                cross_entropy: m.cross_entropy_nats,
                windows: set.segments.len(),
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct GammaRun {
    pub gamma: f64,
    pub outcome: Result<RunRecord>,
}

/// One training run per initial `γ`, all other settings fixed. A diverging
/// run is recorded and the sweep moves on.
pub fn gamma_sweep(cfg: &ExperimentConfig, data: &TaskData, gamma_grid: &[f64]) -> Result<Vec<GammaRun>> {
    if let Some(g) = gamma_grid.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Config(format!("gamma values must be positive, got {g}")));
    }
    let mut runs = Vec::new();
    for &gamma in gamma_grid {
        let mut c = cfg.clone();
        c.gamma_init = gamma;
        let outcome = match train_on(&c, data) {
            Ok(out) => Ok(out.record),
            Err(e @ Error::Divergence { .. }) => Err(e),
            Err(e) => return Err(e),
        };
        runs.push(GammaRun { gamma, outcome });
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub update: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Flattens sweep results; a diverged run contributes one `diverged` row at
/// the failing update.
pub fn sweep_rows(runs: &[GammaRun]) -> Vec<SweepRow> {
    let mut out = Vec::new();
    for run in runs {
        match &run.outcome {
            Ok(rec) => out.extend(rec.rows.iter().map(|r| SweepRow {
                gamma: run.gamma,
                update: r.update,
                split: r.split.clone(),
                metric: r.metric.clone(),
                value: r.value,
            })),
            Err(Error::Divergence { update, loss }) => out.push(SweepRow {
                gamma: run.gamma,
                update: *update,
                split: "train".into(),
                metric: "diverged".into(),
                value: *loss,
            }),
            Err(_) => {}
        }
    }
    out
}

/// Trapezoidal area under a curve of `(update, value)` points, divided by
/// the update span so runs of equal length compare directly.
pub fn mean_curve_level(points: &[(usize, f64)]) -> f64 {
    match points {
        [] => f64::NAN,
        [(_, v)] => *v,
        _ => {
            let area: f64 = points
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
                .sum();
            area / (points[points.len() - 1].0 - points[0].0) as f64
        }
    }
}

/// Trailing moving average with the given window (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// First update whose smoothed training loss is at or below `threshold`.
pub fn updates_to_threshold(record: &RunRecord, threshold: f64, window: usize) -> Option<usize> {
    let series = record.series("train", "loss");
    let values: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
    moving_average(&values, window)
        .iter()
        .position(|v| *v <= threshold)
        .map(|i| series[i].0 + 1)
}
