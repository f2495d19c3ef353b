//! Recurrent cells and sequence unrolling.
//!
//! Four cells share one calling convention: a tanh RNN, its batch-normalized
//! variant, the LSTM, and the BN-LSTM. Parameters live in plain structs of
//! [`Tensor`]s; [`Cell::bind`] registers them on a [`Tape`] for one forward
//! pass. Matrices multiply from the right (`h · W_h`), so `W_h` is
//! `d_h × 4d_h` with gate blocks stored in the order forget, input, output,
//! candidate.

mod cells;
mod params;

pub use cells::{
    bn_lstm_step, bn_rnn_step, lstm_step, rnn_step, BnLstmVars, BnRnnVars, LstmVars, RnnVars,
    StepInput, StepStats,
};
pub use params::{
    BnLstmParams, BnRnnParams, Cell, CellInit, CellKind, LstmParams, RecurrentInit, RnnParams,
    GATE_ORDER,
};

use rand::Rng;

use crate::batchnorm::{BatchStats, StatsMode};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Whether batch normalization uses minibatch or population statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Hidden (and, for LSTMs, cell) state as tape values of shape `[batch × d_h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepState {
    pub h: Var,
    pub c: Option<Var>,
}

/// A cell's parameters registered on a tape.
#[derive(Debug, Clone)]
pub enum BoundCell<'a> {
    Rnn(RnnVars),
    BnRnn(BnRnnVars<'a>),
    Lstm(LstmVars),
    BnLstm(BnLstmVars<'a>),
}

impl BoundCell<'_> {
    /// Parameter handles in the same order as [`Cell::named_params`].
    pub fn param_vars(&self) -> Vec<Var> {
        match self {
            BoundCell::Rnn(v) => v.vars(),
            BoundCell::BnRnn(v) => {
                let mut out = v.base.vars();
                out.extend([v.bn_h.gamma, v.bn_x.gamma]);
                out
            }
            BoundCell::Lstm(v) => v.vars(),
            BoundCell::BnLstm(v) => {
                let mut out = v.base.vars();
                out.extend([v.bn_h.gamma, v.bn_x.gamma, v.bn_c.gamma]);
                out.extend(v.bn_c.beta);
                out
            }
        }
    }

    fn initial(&self) -> (Var, Option<Var>) {
        match self {
            BoundCell::Rnn(v) => (v.h0, None),
            BoundCell::BnRnn(v) => (v.base.h0, None),
            BoundCell::Lstm(v) => (v.h0, Some(v.c0)),
            BoundCell::BnLstm(v) => (v.base.h0, Some(v.base.c0)),
        }
    }

    fn input_mode(&self) -> Option<StatsMode> {
        match self {
            BoundCell::BnRnn(v) => Some(v.pop_x.mode()),
            BoundCell::BnLstm(v) => Some(v.pop_x.mode()),
            _ => None,
        }
    }

    fn input_weights(&self) -> Var {
        match self {
            BoundCell::Rnn(v) => v.w_x,
            BoundCell::BnRnn(v) => v.base.w_x,
            BoundCell::Lstm(v) => v.w_x,
            BoundCell::BnLstm(v) => v.base.w_x,
        }
    }

    /// One transition at absolute timestep `t` (1-based).
    pub fn step(
        &self,
        tape: &mut Tape,
        state: StepState,
        x: StepInput,
        t: usize,
        phase: Phase,
    ) -> Result<(StepState, StepStats)> {
        let raw = |x: StepInput| match x {
            StepInput::Raw(v) => Ok(v),
            StepInput::InputTerm(_) => Err(Error::Config(
                "pre-normalized input terms only apply to batch-normalized cells".into(),
            )),
        };
        match self {
            BoundCell::Rnn(v) => {
                let h = rnn_step(tape, v, state.h, raw(x)?)?;
                Ok((StepState { h, c: None }, StepStats::default()))
            }
            BoundCell::BnRnn(v) => {
                let (h, stats) = bn_rnn_step(tape, v, state.h, x, t, phase)?;
                Ok((StepState { h, c: None }, stats))
            }
            BoundCell::Lstm(v) => {
                let s = lstm_step(tape, v, state, raw(x)?)?;
                Ok((s, StepStats::default()))
            }
            BoundCell::BnLstm(v) => bn_lstm_step(tape, v, state, x, t, phase),
        }
    }

    /// Normalizes the input term of every timestep with statistics shared
    /// over time; returns one `[batch × width]` term per timestep.
    fn sequencewise_input_terms(
        &self,
        tape: &mut Tape,
        x_all: Var,
        steps: usize,
        phase: Phase,
    ) -> Result<(Vec<Var>, Option<BatchStats>)> {
        let batch = tape.shape(x_all)[0] / steps;
        let term = tape.matmul(x_all, self.input_weights())?;
        let (bn, pop) = match self {
            BoundCell::BnRnn(v) => (v.bn_x, v.pop_x),
            BoundCell::BnLstm(v) => (v.bn_x, v.pop_x),
            _ => unreachable!("only batch-normalized cells have an input mode"),
        };
        let (normed, stats) = cells::normalize(tape, term, &bn, pop, 1, phase)?;
        let terms = (0..steps)
            .map(|k| tape.slice_rows(normed, k * batch, (k + 1) * batch))
            .collect::<Result<Vec<_>>>()?;
        Ok((terms, stats))
    }
}

/// Minibatch statistics gathered while unrolling in the training phase.
///
/// Entry `k` of `h`/`c` belongs to timestep `t_offset + k + 1`; `x` follows
/// the same layout in per-timestep mode and holds a single entry in
/// sequencewise mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsTrace {
    pub h: Vec<BatchStats>,
    pub x: Vec<BatchStats>,
    pub c: Vec<BatchStats>,
}

#[derive(Debug, Clone)]
pub struct Unrolled {
    pub states: Vec<StepState>,
    pub stats: StatsTrace,
}

impl Unrolled {
    pub fn last(&self) -> StepState {
        *self.states.last().expect("unroll produces at least one state")
    }
}

pub(crate) fn seq_dims(x_seq: &Tensor) -> Result<(usize, usize, usize)> {
    match x_seq.shape() {
        &[t, b, d] if t > 0 && b > 0 => Ok((t, b, d)),
        other => Err(Error::shape("unroll", other, &[0, 0, 0])),
    }
}

/// Broadcasts the learned initial state across the batch, adding i.i.d.
/// `N(0, noise_std²)` noise to every example when `noise_std > 0`.
pub fn init_state<R: Rng + ?Sized>(
    tape: &mut Tape,
    cell: &BoundCell,
    batch: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<StepState> {
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise_std must be nonnegative, got {noise_std}")));
    }
    let (h0, c0) = cell.initial();
    let mut spread = |tape: &mut Tape, v: Var| -> Result<Var> {
        let rows = tape.broadcast_rows(v, batch)?;
        if noise_std == 0.0 {
            return Ok(rows);
        }
        let noise = Tensor::randn(tape.shape(rows), noise_std, rng);
        let noise = tape.leaf(noise);
        tape.add(rows, noise)
    };
    let h = spread(tape, h0)?;
    let c = c0.map(|c0| spread(tape, c0)).transpose()?;
    Ok(StepState { h, c })
}

/// Runs the cell over `x_seq` (`[T × batch × d_x]`) for timesteps
/// `t_offset + 1 ..= t_offset + T`, returning every state.
pub fn unroll(
    tape: &mut Tape,
    cell: &BoundCell,
    x_seq: &Tensor,
    init: StepState,
    phase: Phase,
    t_offset: usize,
) -> Result<Unrolled> {
    let (steps, batch, d_x) = seq_dims(x_seq)?;
    let x_all = tape.leaf(x_seq.clone().reshape(&[steps * batch, d_x])?);
    unroll_var(tape, cell, x_all, steps, init, phase, t_offset)
}

/// [`unroll`] over inputs already on the tape, stacked time-major as
/// `[(T·batch) × d_x]`.
pub fn unroll_var(
    tape: &mut Tape,
    cell: &BoundCell,
    x_all: Var,
    steps: usize,
    init: StepState,
    phase: Phase,
    t_offset: usize,
) -> Result<Unrolled> {
    let rows = tape.shape(x_all)[0];
    if steps == 0 || rows == 0 || rows % steps != 0 {
        return Err(Error::shape("unroll", tape.shape(x_all), &[steps]));
    }
    let batch = rows / steps;
    let mut trace = StatsTrace::default();
    let pre_terms = if cell.input_mode() == Some(StatsMode::Sequencewise) {
        let (terms, stats) = cell.sequencewise_input_terms(tape, x_all, steps, phase)?;
        trace.x.extend(stats);
        Some(terms)
    } else {
        None
    };

    let mut state = init;
    let mut states = Vec::with_capacity(steps);
    for k in 0..steps {
        let input = match &pre_terms {
            Some(terms) => StepInput::InputTerm(terms[k]),
            None => StepInput::Raw(tape.slice_rows(x_all, k * batch, (k + 1) * batch)?),
        };
        let (next, stats) = cell.step(tape, state, input, t_offset + k + 1, phase)?;
        trace.h.extend(stats.h);
        trace.x.extend(stats.x);
        trace.c.extend(stats.c);
        states.push(next);
        state = next;
    }
    Ok(Unrolled {
        states,
        stats: trace,
    })
}
