use crate::batchnorm::{bn_forward_train, bn_infer_on_tape, BatchStats, BoundBn, PopulationStats};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

use super::{Phase, StepState};

#[derive(Debug, Clone, Copy)]
pub struct RnnVars {
    pub w_h: Var,
    pub w_x: Var,
    pub b: Var,
    pub h0: Var,
}

impl RnnVars {
    pub(crate) fn vars(&self) -> Vec<Var> {
        vec![self.w_h, self.w_x, self.b, self.h0]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_h: Var,
    pub w_x: Var,
    pub b: Var,
    pub h0: Var,
    pub c0: Var,
}

impl LstmVars {
    pub(crate) fn vars(&self) -> Vec<Var> {
        vec![self.w_h, self.w_x, self.b, self.h0, self.c0]
    }
}

#[derive(Debug, Clone)]
pub struct BnRnnVars<'a> {
    pub base: RnnVars,
    pub bn_h: BoundBn,
    pub bn_x: BoundBn,
    pub pop_h: &'a PopulationStats,
    pub pop_x: &'a PopulationStats,
}

#[derive(Debug, Clone)]
pub struct BnLstmVars<'a> {
    pub base: LstmVars,
    pub bn_h: BoundBn,
    pub bn_x: BoundBn,
    pub bn_c: BoundBn,
    pub pop_h: &'a PopulationStats,
    pub pop_x: &'a PopulationStats,
    pub pop_c: &'a PopulationStats,
}

/// Input to a single cell step.
#[derive(Debug, Clone, Copy)]
pub enum StepInput {
    /// `[batch × d_x]` input; the cell forms and normalizes `x · W_x` itself.
    Raw(Var),
    /// An already normalized input term (sequencewise statistics).
    InputTerm(Var),
}

/// Training-phase statistics produced by one step, one per normalizer used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub h: Option<BatchStats>,
    pub x: Option<BatchStats>,
    pub c: Option<BatchStats>,
}

pub(crate) fn normalize(
    tape: &mut Tape,
    value: Var,
    bn: &BoundBn,
    pop: &PopulationStats,
    t: usize,
    phase: Phase,
) -> Result<(Var, Option<BatchStats>)> {
    match phase {
        Phase::Train => {
            let (y, stats) = bn_forward_train(tape, value, bn)?;
            Ok((y, Some(stats)))
        }
        Phase::Infer => {
            let (mean, var) = pop.stats_for_timestep(t)?;
            Ok((bn_infer_on_tape(tape, value, bn, mean, var)?, None))
        }
    }
}

/// `h' = tanh(h · W_h + x · W_x + b)`
pub fn rnn_step(tape: &mut Tape, p: &RnnVars, h: Var, x: Var) -> Result<Var> {
    let rec = tape.matmul(h, p.w_h)?;
    let inp = tape.matmul(x, p.w_x)?;
    let sum = tape.add(rec, inp)?;
    let pre = tape.add_rows(sum, p.b)?;
    Ok(tape.tanh(pre))
}

/// `h' = tanh(BN(h · W_h; γ_h) + BN(x · W_x; γ_x) + b)`, shifts absent.
pub fn bn_rnn_step(
    tape: &mut Tape,
    p: &BnRnnVars,
    h: Var,
    x: StepInput,
    t: usize,
    phase: Phase,
) -> Result<(Var, StepStats)> {
    let mut stats = StepStats::default();
    let rec = tape.matmul(h, p.base.w_h)?;
    let (rec, sh) = normalize(tape, rec, &p.bn_h, p.pop_h, t, phase)?;
    stats.h = sh;
    let inp = match x {
        StepInput::Raw(x) => {
            let term = tape.matmul(x, p.base.w_x)?;
            let (term, sx) = normalize(tape, term, &p.bn_x, p.pop_x, t, phase)?;
            stats.x = sx;
            term
        }
        StepInput::InputTerm(term) => term,
    };
    let sum = tape.add(rec, inp)?;
    let pre = tape.add_rows(sum, p.base.b)?;
    Ok((tape.tanh(pre), stats))
}

/// Splits `[batch × 4d]` pre-activations into gates and applies the LSTM
/// cell update; `normalize_cell` optionally transforms `c'` before the
/// output nonlinearity.
fn gates_and_update(
    tape: &mut Tape,
    pre: Var,
    c: Var,
    normalize_cell: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<StepState> {
    let d = tape.shape(pre)[1] / 4;
    let f = tape.slice_cols(pre, 0, d)?;
    let i = tape.slice_cols(pre, d, 2 * d)?;
    let o = tape.slice_cols(pre, 2 * d, 3 * d)?;
    let g = tape.slice_cols(pre, 3 * d, 4 * d)?;
    let f = tape.sigmoid(f);
    let i = tape.sigmoid(i);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let read = normalize_cell(tape, c_next)?;
    let read = tape.tanh(read);
    let h_next = tape.mul(o, read)?;
    Ok(StepState {
        h: h_next,
        c: Some(c_next),
    })
}

fn cell_of(state: StepState) -> Result<Var> {
    state.c.ok_or_else(|| Error::Config("LSTM step requires a cell state".into()))
}

/// Plain LSTM transition.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, state: StepState, x: Var) -> Result<StepState> {
    let c = cell_of(state)?;
    let rec = tape.matmul(state.h, p.w_h)?;
    let inp = tape.matmul(x, p.w_x)?;
    let sum = tape.add(rec, inp)?;
    let pre = tape.add_rows(sum, p.b)?;
    gates_and_update(tape, pre, c, |_, c| Ok(c))
}

/// BN-LSTM transition.
///
/// The recurrent and input terms are normalized separately without shifts,
/// the cell update itself is left unnormalized, and the cell is normalized
/// (with `γ_c`, `β_c`) only on its way to the output gate.
pub fn bn_lstm_step(
    tape: &mut Tape,
    p: &BnLstmVars,
    state: StepState,
    x: StepInput,
    t: usize,
    phase: Phase,
) -> Result<(StepState, StepStats)> {
    let c = cell_of(state)?;
    let mut stats = StepStats::default();
    let rec = tape.matmul(state.h, p.base.w_h)?;
    let (rec, sh) = normalize(tape, rec, &p.bn_h, p.pop_h, t, phase)?;
    stats.h = sh;
    let inp = match x {
        StepInput::Raw(x) => {
            let term = tape.matmul(x, p.base.w_x)?;
            let (term, sx) = normalize(tape, term, &p.bn_x, p.pop_x, t, phase)?;
            stats.x = sx;
            term
        }
        StepInput::InputTerm(term) => term,
    };
    let sum = tape.add(rec, inp)?;
    let pre = tape.add_rows(sum, p.base.b)?;
    let mut sc = None;
    let next = gates_and_update(tape, pre, c, |tape, c_next| {
        let (y, s) = normalize(tape, c_next, &p.bn_c, p.pop_c, t, phase)?;
        sc = s;
        Ok(y)
    })?;
    stats.c = sc;
    Ok((next, stats))
}
