//! Flat experiment configuration with key-value text overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::batchnorm::{PopEstimator, StatsMode};
use crate::error::{Error, Result};
use crate::optim::{ClipConfig, ClipMode, OptimConfig, OptimizerKind};
use crate::recurrent::{CellInit, CellKind, RecurrentInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// MNIST pixels in scanline order.
    SeqMnist,
    /// MNIST pixels in one fixed random order.
    Pmnist,
    /// Next-character prediction on a text file.
    CharLm,
    /// Next-character prediction on a synthetic first-order Markov source.
    Markov,
    /// Recall of the first symbol of a random sequence.
    Copy,
}

impl TaskKind {
    pub fn is_language_model(self) -> bool {
        matches!(self, TaskKind::CharLm | TaskKind::Markov)
    }

    pub fn is_mnist(self) -> bool {
        matches!(self, TaskKind::SeqMnist | TaskKind::Pmnist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Cumulative,
    Ema,
}

/// Every knob of a training run. Unset paths mean "use synthetic data" or
/// "write nothing".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub model: CellKind,
    pub hidden_size: usize,
    pub batch_size: usize,

    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub stabilizer: f64,
    pub clip_threshold: f64,
    pub clip_mode: ClipMode,

    pub recurrent_init: RecurrentInit,
    pub gamma_init: f64,
    pub beta_init: f64,
    pub epsilon: f64,
    pub forget_bias: f64,
    pub noise_std: f64,
    pub input_mode: StatsMode,
    pub pop_estimator: EstimatorKind,
    pub ema_momentum: f64,
    /// Input embedding width for symbol tasks; 0 feeds one-hot vectors directly.
    pub embedding_dim: usize,

    /// Window length for symbol tasks; for pixel tasks a nonzero value keeps
    /// only the first `seq_len` pixels.
    pub seq_len: usize,
    /// Last timestep with its own population statistics; 0 means the
    /// training length.
    pub t_max: usize,
    pub updates: usize,
    pub eval_every: usize,

    pub init_seed: u64,
    pub data_seed: u64,
    pub noise_seed: u64,

    /// MNIST IDX directory or corpus text file.
    pub data_path: Option<PathBuf>,
    pub synthetic_seed: u64,
    pub downscale: usize,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub permutation_seed: u64,
    pub train_chars: usize,
    pub valid_chars: usize,
    pub corpus_chars: usize,
    pub markov_symbols: usize,
    pub copy_vocab: usize,

    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Record elapsed seconds per row; off makes run records byte-stable.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(TaskKind::Pmnist)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for a task.
    pub fn preset(task: TaskKind) -> Self {
        let mut cfg = ExperimentConfig {
            task,
            model: CellKind::BnLstm,
            hidden_size: 64,
            batch_size: 16,
            optimizer: OptimizerKind::RmsProp,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            stabilizer: 1e-8,
            clip_threshold: 1.0,
            clip_mode: ClipMode::GlobalNorm,
            recurrent_init: RecurrentInit::Identity,
            gamma_init: 0.1,
            beta_init: 0.0,
            epsilon: crate::batchnorm::DEFAULT_EPSILON,
            forget_bias: 0.0,
            noise_std: 0.1,
            input_mode: StatsMode::PerTimestep,
            pop_estimator: EstimatorKind::Cumulative,
            ema_momentum: 0.1,
            embedding_dim: 0,
            seq_len: 0,
            t_max: 0,
            updates: 3000,
            eval_every: 500,
            init_seed: 1,
            data_seed: 2,
            noise_seed: 3,
            data_path: None,
            synthetic_seed: 2016,
            downscale: 2,
            train_examples: 2000,
            valid_examples: 500,
            permutation_seed: crate::tasks::pixels::DEFAULT_PERMUTATION_SEED,
            train_chars: 0,
            valid_chars: 0,
            corpus_chars: 0,
            markov_symbols: 8,
            copy_vocab: 5,
            out_dir: None,
            checkpoint: None,
            record_timing: true,
        };
        match task {
            TaskKind::SeqMnist | TaskKind::Pmnist => {
                // Minibatches of 16 give noisy statistics; a larger epsilon
                // keeps near-constant pixel columns from spiking the loss.
                cfg.epsilon = 1e-3;
            }
            TaskKind::CharLm | TaskKind::Markov => {
                cfg.batch_size = 32;
                cfg.optimizer = OptimizerKind::Adam;
                cfg.learning_rate = 2e-3;
                cfg.recurrent_init = RecurrentInit::Orthogonal;
                cfg.seq_len = 50;
                cfg.updates = 2000;
                cfg.eval_every = 250;
                cfg.train_chars = 160_000;
                cfg.valid_chars = 10_000;
                cfg.corpus_chars = 180_000;
            }
            TaskKind::Copy => {
                cfg.hidden_size = 32;
                cfg.batch_size = 20;
                cfg.optimizer = OptimizerKind::Adam;
                cfg.learning_rate = 1e-2;
                cfg.recurrent_init = RecurrentInit::Orthogonal;
                cfg.seq_len = 8;
                cfg.updates = 50;
                cfg.eval_every = 25;
                cfg.train_examples = 500;
                cfg.valid_examples = 100;
            }
        }
        cfg
    }

    /// Hyperparameters of the corresponding full-scale experiment, recorded
    /// next to every output for comparison with the desk-scale run.
    pub fn reference_scale(&self) -> Value {
        match self.task {
            TaskKind::SeqMnist | TaskKind::Pmnist => json!({
                "hidden_size": 100, "seq_len": 784, "optimizer": "rmsprop",
                "learning_rate": 1e-3, "momentum": 0.9, "clip_threshold": 1.0,
                "recurrent_init": "identity", "gamma_init": 0.1, "train_examples": 60000,
            }),
            TaskKind::CharLm | TaskKind::Markov => json!({
                "hidden_size": 1000, "seq_len": 100, "batch_size": 64, "optimizer": "adam",
                "learning_rate": 2e-3, "clip_threshold": 1.0, "recurrent_init": "orthogonal",
                "gamma_init": 0.1,
            }),
            TaskKind::Copy => Value::Null,
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_momentum: self.momentum,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            stabilizer: self.stabilizer,
        }
    }

    pub fn clip_config(&self) -> Result<ClipConfig> {
        ClipConfig::new(self.clip_threshold, self.clip_mode)
    }

    pub fn estimator(&self) -> PopEstimator {
        match self.pop_estimator {
            EstimatorKind::Cumulative => PopEstimator::Cumulative,
            EstimatorKind::Ema => PopEstimator::Ema {
                momentum: self.ema_momentum,
            },
        }
    }

    pub fn cell_init(&self, steps: usize) -> CellInit {
        CellInit {
            recurrent: self.recurrent_init,
            gamma: self.gamma_init,
            beta: self.beta_init,
            epsilon: self.epsilon,
            forget_bias: self.forget_bias,
            t_max: self.effective_t_max(steps),
            input_mode: self.input_mode,
            estimator: self.estimator(),
        }
    }

    pub fn effective_t_max(&self, steps: usize) -> usize {
        if self.t_max == 0 {
            steps.max(1)
        } else {
            self.t_max
        }
    }

    /// Checks every value that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden_size == 0 || self.batch_size == 0 {
            return bad("hidden_size and batch_size must be positive".into());
        }
        if self.model.is_normalized() && self.batch_size < 2 {
            return bad("batch normalization needs batch_size of at least 2".into());
        }
        self.optim_config().validate()?;
        self.clip_config()?;
        if !(self.gamma_init > 0.0) || !self.beta_init.is_finite() {
            return bad(format!("gamma_init must be positive, got {}", self.gamma_init));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        if self.pop_estimator == EstimatorKind::Ema && !(self.ema_momentum > 0.0 && self.ema_momentum <= 1.0) {
            return bad(format!("ema_momentum {} outside (0, 1]", self.ema_momentum));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.task.is_mnist() {
            if self.downscale == 0 || 28 % self.downscale != 0 {
                return bad(format!("downscale {} does not divide 28", self.downscale));
            }
            if self.train_examples == 0 || self.valid_examples == 0 {
                return bad("train_examples and valid_examples must be positive".into());
            }
        }
        if self.task.is_language_model() || self.task == TaskKind::Copy {
            if self.seq_len == 0 {
                return bad("seq_len must be positive for symbol tasks".into());
            }
        }
        if self.task == TaskKind::CharLm && self.data_path.is_none() {
            return bad("char-lm needs data_path pointing at a text file".into());
        }
        if self.task == TaskKind::Markov {
            if self.markov_symbols < 2 {
                return bad("markov_symbols must be at least 2".into());
            }
            if self.train_chars + self.valid_chars > self.corpus_chars {
                return bad("train_chars + valid_chars exceeds corpus_chars".into());
            }
        }
        if self.task == TaskKind::Copy && (self.copy_vocab < 2 || self.train_examples == 0 || self.valid_examples == 0) {
            return bad("copy task needs copy_vocab ≥ 2 and positive example counts".into());
        }
        if self.embedding_dim > 0 && self.task.is_mnist() {
            return bad("embedding_dim applies to symbol tasks only".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn keys() -> Vec<String> {
        match serde_json::to_value(ExperimentConfig::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => vec![],
        }
    }

    /// Sets one field from its textual form. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        self.set_many(&[(key.to_string(), raw.to_string())])
    }

    pub fn set_many(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut map = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        for (key, raw) in pairs {
            let key = key.trim().replace('-', "_");
            let raw = raw.trim();
            let slot = map
                .get(&key)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            let value = typed_value(slot, raw).ok_or_else(|| Error::Config(format!("invalid value {raw:?} for {key}")))?;
            map.insert(key, value);
        }
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Renders the config in the same key-value syntax [`parse_kv`] reads.
    ///
    /// [`parse_kv`]: ExperimentConfig::parse_kv
    pub fn to_kv(&self) -> String {
        let map: Map<String, Value> = match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        let mut out = String::new();
        for (k, v) in map {
            let text = match v {
                Value::Null => continue,
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
        out
    }
}

fn typed_value(current: &Value, raw: &str) -> Option<Value> {
    if raw.eq_ignore_ascii_case("none") || raw.is_empty() {
        return current.is_null().then_some(Value::Null);
    }
    match current {
        Value::Bool(_) => raw.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::from),
        _ => Some(Value::String(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for task in [TaskKind::SeqMnist, TaskKind::Pmnist, TaskKind::Markov, TaskKind::Copy] {
            ExperimentConfig::preset(task).validate().unwrap();
        }
        assert!(ExperimentConfig::preset(TaskKind::CharLm).validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ExperimentConfig::preset(TaskKind::Markov);
        cfg.gamma_init = 0.3;
        cfg.data_path = Some("corpus.txt".into());
        let text = cfg.to_kv();
        let mut back = ExperimentConfig::preset(TaskKind::Pmnist);
        back.set_many(&ExperimentConfig::parse_kv(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn overrides_are_typed() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("model", "lstm").unwrap();
        cfg.set("learning-rate", "0.01").unwrap();
        cfg.set("record_timing", "false").unwrap();
        cfg.set("optimizer", "rmsprop").unwrap();
        assert_eq!(cfg.model, CellKind::Lstm);
        assert_eq!(cfg.learning_rate, 0.01);
        assert!(!cfg.record_timing);
        assert!(cfg.set("hidden_size", "-3").is_err());
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(cfg.set("model", "gru").is_err());
    }

    #[test]
    fn float_fields_accept_integer_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("gamma_init", "1").unwrap();
        assert_eq!(cfg.gamma_init, 1.0);
    }

    #[test]
    fn invalid_values_rejected_before_training() {
        let mut cfg = ExperimentConfig::default();
        cfg.gamma_init = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.noise_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
