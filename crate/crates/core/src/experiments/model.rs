//! A recurrent cell with an optional input embedding and a softmax readout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recurrent::{init_state, unroll_var, Cell, Phase, Unrolled};
use crate::tape::{Tape, Var};
use crate::tasks::{classify_head, lm_head, Batch, Linear, MetricsAccumulator, SequenceSource};
use crate::tensor::Tensor;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub cell: Cell,
    pub head: Linear,
    /// `[d_x × embedding_dim]` table applied to one-hot inputs.
    pub embedding: Option<Tensor>,
}

/// Everything one forward pass leaves on the tape.
pub struct Forward {
    pub loss: Var,
    pub logits: Var,
    pub unrolled: Unrolled,
    /// Trainable handles in [`Model::named_params`] order.
    pub params: Vec<Var>,
}

impl Model {
    /// Fresh parameters drawn from `cfg.init_seed`.
    pub fn new(cfg: &ExperimentConfig, d_x: usize, classes: usize, steps: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (embedding, cell_in) = if cfg.embedding_dim > 0 {
            let scale = 1.0 / (cfg.embedding_dim as f64).sqrt();
            (Some(Tensor::randn(&[d_x, cfg.embedding_dim], scale, &mut rng)), cfg.embedding_dim)
        } else {
            (None, d_x)
        };
        let cell = Cell::new(cfg.model, cell_in, cfg.hidden_size, &cfg.cell_init(steps), &mut rng)?;
        let head = Linear::init(cfg.hidden_size, classes, &mut rng);
        Ok(Model { cell, head, embedding })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .cell
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("cell.{n}"), t))
            .collect();
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        if let Some(e) = &self.embedding {
            out.push(("embedding".into(), e));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.cell.params_mut();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out.extend(self.embedding.as_mut());
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect()
    }

    /// Unrolls over `batch` and attaches the loss: cross-entropy of the final
    /// state for per-sequence labels, or mean cross-entropy over every step.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        per_step: bool,
        phase: Phase,
        noise_std: f64,
        rng: &mut R,
        t_offset: usize,
    ) -> Result<Forward> {
        let (steps, size) = (batch.steps(), batch.size());
        let cell = self.cell.bind(tape);
        let mut params = cell.param_vars();
        let head = self.head.bind(tape);
        params.extend([head.weight, head.bias]);

        let d_x = batch.inputs.shape()[2];
        let x = tape.leaf(batch.inputs.clone().reshape(&[steps * size, d_x])?);
        let x = match &self.embedding {
            Some(e) => {
                let e = tape.leaf(e.clone());
                params.push(e);
                tape.matmul(x, e)?
            }
            None => x,
        };

        let init = init_state(tape, &cell, size, noise_std, rng)?;
        let unrolled = unroll_var(tape, &cell, x, steps, init, phase, t_offset)?;
        let logits = if per_step {
            let hs: Vec<Var> = unrolled.states.iter().map(|s| s.h).collect();
            lm_head(tape, &hs, &head)?
        } else {
            classify_head(tape, unrolled.last().h, &head)?
        };
        let expected = if per_step { steps * size } else { size };
        if batch.targets.len() != expected {
            return Err(Error::shape("targets", &[batch.targets.len()], &[expected]));
        }
        let loss = tape.softmax_cross_entropy(logits, &batch.targets)?;
        Ok(Forward {
            loss,
            logits,
            unrolled,
            params,
        })
    }

    /// Inference-phase metrics over every example of `source`, batched in
    /// order; uses population statistics and no initial-state noise.
    pub fn evaluate(&self, source: &dyn SequenceSource, batch_size: usize) -> Result<crate::tasks::Metrics> {
        let mut acc = MetricsAccumulator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = source.len();
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let batch = source.batch(&idx)?;
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, source.per_step_targets(), Phase::Infer, 0.0, &mut rng, 0)?;
            acc.add(tape.value(fwd.logits), &batch.targets)?;
            start = end;
        }
        Ok(acc.finish())
    }

    /// Training-phase passes over the given batches, folded into the
    /// population statistics without touching the parameters.
    pub fn accumulate_population(
        &mut self,
        source: &dyn SequenceSource,
        batches: &[Vec<usize>],
        noise_std: f64,
        seed: u64,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for idx in batches {
            let batch = source.batch(idx)?;
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, source.per_step_targets(), Phase::Train, noise_std, &mut rng, 0)?;
            let trace = fwd.unrolled.stats;
            self.cell.absorb(&trace, 0)?;
        }
        Ok(())
    }
}
