//! The training loop and its run record.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batchnorm::PopEstimator;
use crate::error::{Error, Result};
use crate::optim::{clip_gradients, OptimState};
use crate::recurrent::Phase;
use crate::tape::Tape;
use crate::tasks::{Metrics, SequenceSource};

use super::config::ExperimentConfig;
use super::data::{load_task, TaskData};
use super::model::Model;

/// One measurement. Training rows carry the minibatch loss of update
/// `update`; evaluation rows are taken after `update` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub update: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub reference_scale: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RunHeader,
    pub rows: Vec<MetricRow>,
}

impl RunRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        RunRecord {
            header: RunHeader {
                config: config.clone(),
                config_hash: config.hash(),
                reference_scale: config.reference_scale(),
            },
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, update: usize, split: &str, metric: &str, value: f64, wall_clock_s: f64) {
        debug_assert!(self.rows.last().is_none_or(|r| r.update <= update));
        self.rows.push(MetricRow {
            update,
            split: split.into(),
            metric: metric.into(),
            value,
            wall_clock_s,
        });
    }

    /// Values of one metric in update order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.update, r.value))
            .collect()
    }

    pub fn last_value(&self, split: &str, metric: &str) -> Option<f64> {
        self.series(split, metric).last().map(|(_, v)| *v)
    }

    /// Equality ignoring timing.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        self.header == other.header
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.update == b.update
                    && a.split == b.split
                    && a.metric == b.metric
                    && a.value.to_bits() == b.value.to_bits()
            })
    }

    /// Header line followed by one JSON object per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let header: RunHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Data(format!("{} is empty", path.display()))),
        };
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                rows.push(serde_json::from_str(&line)?);
            }
        }
        Ok(RunRecord { header, rows })
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: Model,
    pub optimizer: OptimState,
    pub updates: usize,
}

/// Loads the configured data and trains on it.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let data = load_task(cfg)?;
    train_on(cfg, &data)
}

fn epoch_order(n: usize, data_seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let seed = data_seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

fn epoch_seed(data_seed: u64, epoch: usize) -> u64 {
    data_seed.wrapping_add(0x5851_f42d_4c95_7f2d_u64.wrapping_mul(epoch as u64 + 1))
}

pub(crate) fn log_eval(record: &mut RunRecord, update: usize, m: &Metrics, t: f64) {
    record.push(update, "valid", "cross_entropy", m.cross_entropy_nats, t);
    record.push(update, "valid", "bpc", m.bits_per_character, t);
    record.push(update, "valid", "accuracy", m.accuracy, t);
}

/// Calibration batches used when no population statistics exist yet.
const CALIBRATION_BATCHES: usize = 8;

fn evaluate_now(model: &Model, data: &TaskData, cfg: &ExperimentConfig) -> Result<Metrics> {
    let valid = data.valid()?;
    let needs_population = model.cell.kind().is_normalized()
        && model.cell.populations().iter().any(|(_, p)| !p.is_populated());
    if !needs_population {
        return model.evaluate(valid.get(), cfg.batch_size);
    }
    let mut probe = model.clone();
    let train = data.train_epoch(epoch_seed(cfg.data_seed, 0))?;
    let order = epoch_order(train.get().len(), cfg.data_seed, 0);
    let batches: Vec<Vec<usize>> = order
        .chunks_exact(cfg.batch_size)
        .take(CALIBRATION_BATCHES)
        .map(<[usize]>::to_vec)
        .collect();
    probe.accumulate_population(train.get(), &batches, cfg.noise_std, cfg.noise_seed)?;
    probe.evaluate(valid.get(), cfg.batch_size)
}

/// Runs `cfg.updates` optimizer steps.
///
/// Each epoch visits every training sequence once in a seeded order, in
/// full minibatches. Population statistics accumulate from every update
/// and, for the cumulative estimator, restart at the beginning of the last
/// complete epoch. Validation runs in the inference phase at update 0, every
/// `eval_every` updates, and after the last update.
pub fn train_on(cfg: &ExperimentConfig, data: &TaskData) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let clock = |on: bool| if on { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut model = Model::new(cfg, data.input_dim(), data.classes(), data.steps())?;
    let shapes = model.param_shapes();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut optimizer = OptimState::new(cfg.optim_config(), &shape_refs)?;
    let clip = cfg.clip_config()?;
    let mut record = RunRecord::new(cfg);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);

    let per_epoch = data.updates_per_epoch(cfg.batch_size)?;
    // The final epoch is the last complete pass plus any partial tail, so
    // restarted statistics always average over the whole training set.
    let final_epoch = (cfg.updates / per_epoch).saturating_sub(1);
    let resets = matches!(cfg.estimator(), PopEstimator::Cumulative);

    let m = evaluate_now(&model, data, cfg)?;
    log_eval(&mut record, 0, &m, clock(cfg.record_timing));

    let mut update = 0;
    let mut epoch = 0;
    while update < cfg.updates {
        let source = data.train_epoch(epoch_seed(cfg.data_seed, epoch))?;
        let source: &dyn SequenceSource = source.get();
        let order = epoch_order(source.len(), cfg.data_seed, epoch);
        if epoch == final_epoch && epoch > 0 && resets {
            model.cell.reset_populations();
        }
        for idx in order.chunks_exact(cfg.batch_size).take(per_epoch) {
            if update >= cfg.updates {
                break;
            }
            let batch = source.batch(idx)?;
            let mut tape = Tape::new();
            let fwd = model.forward(
                &mut tape,
                &batch,
                source.per_step_targets(),
                Phase::Train,
                cfg.noise_std,
                &mut noise_rng,
                0,
            )?;
            let loss = tape.value(fwd.loss).item()?;
            if !loss.is_finite() {
                return Err(Error::Divergence { update, loss });
            }
            let grads = tape.backward(fwd.loss)?;
            let mut grads: Vec<_> = fwd.params.iter().map(|v| grads.wrt(*v)).collect();
            let norm = clip_gradients(&mut grads, &clip).map_err(|_| Error::Divergence { update, loss })?;
            optimizer.step(&mut model.params_mut(), &grads)?;
            model.cell.absorb(&fwd.unrolled.stats, 0)?;

            let t = clock(cfg.record_timing);
            record.push(update, "train", "loss", loss, t);
            record.push(update, "train", "grad_norm", norm, t);
            update += 1;
            if update % cfg.eval_every == 0 || update == cfg.updates {
                let m = evaluate_now(&model, data, cfg)?;
                log_eval(&mut record, update, &m, clock(cfg.record_timing));
            }
        }
        epoch += 1;
    }
    Ok(TrainOutcome {
        record,
        model,
        optimizer,
        updates: update,
    })
}
