//! Oracle checks shared by the cell tests and the acceptance suite.

use bnrnn_core::batchnorm::{BoundBn, PopEstimator, PopulationStats, StatsMode};
use bnrnn_core::gradcheck::{finite_diff_check_many, GradCheckReport};
use bnrnn_core::recurrent::{unroll, BnLstmVars, BoundCell, Cell, CellInit, CellKind, LstmVars, Phase, StepInput, StepState};
use bnrnn_core::{Tape, Tensor};

use super::*;

pub fn fresh(kind: CellKind, d_x: usize, d_h: usize, seed: u64) -> Cell {
    let mut r = rng(seed);
    let mut cell = Cell::new(kind, d_x, d_h, &CellInit { t_max: 16, ..CellInit::default() }, &mut r).unwrap();
    randomize(&mut cell, &mut r);
    cell
}

pub fn one_step(cell: &Cell, h: &Tensor, c: &Tensor, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = cell.bind(&mut tape);
    let state = StepState {
        h: tape.leaf(h.clone()),
        c: Some(tape.leaf(c.clone())),
    };
    let xv = tape.leaf(x.clone());
    let (next, _) = bound.step(&mut tape, state, StepInput::Raw(xv), 1, Phase::Train).unwrap();
    let c_out = next.c.map(|c| tape.value(c).data().to_vec()).unwrap_or_default();
    (tape.value(next.h).data().to_vec(), c_out)
}

/// Largest deviation of any cell kind from its straight-line formula.
pub fn formula_mismatch(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(100 + seed);
    let (m, d_x, d_h) = (4, 3, 5 + (seed as usize % 4));
    let h = random(&[m, d_h], &mut r);
    let c = random(&[m, d_h], &mut r);
    let x = random(&[m, d_x], &mut r);

    let cell = fresh(CellKind::Rnn, d_x, d_h, seed);
    let Cell::Rnn(p) = &cell else { unreachable!() };
    let expect = rnn_step(h.data(), x.data(), m, &p.w_h, &p.w_x, &p.b);
    worst = worst.max(max_abs_diff(&one_step(&cell, &h, &c, &x).0, &expect));

    let cell = fresh(CellKind::BnRnn, d_x, d_h, seed);
    let Cell::BnRnn(p) = &cell else { unreachable!() };
    let eps = p.bn_h.epsilon;
    let rec = batch_norm(&matmul(h.data(), m, d_h, p.base.w_h.data(), d_h), m, d_h, p.bn_h.gamma.data(), None, eps);
    let inp = batch_norm(&matmul(x.data(), m, d_x, p.base.w_x.data(), d_h), m, d_h, p.bn_x.gamma.data(), None, eps);
    let expect: Vec<f64> = add_bias(&add(&rec, &inp), p.base.b.data()).iter().map(|v| v.tanh()).collect();
    worst = worst.max(max_abs_diff(&one_step(&cell, &h, &c, &x).0, &expect));

    let cell = fresh(CellKind::Lstm, d_x, d_h, seed);
    let Cell::Lstm(p) = &cell else { unreachable!() };
    let lref = LstmRef { w_h: &p.w_h, w_x: &p.w_x, b: &p.b };
    let (eh, ec) = lstm_step(&lref, h.data(), c.data(), x.data(), m);
    let (gh, gc) = one_step(&cell, &h, &c, &x);
    worst = worst.max(max_abs_diff(&gh, &eh));
    worst = worst.max(max_abs_diff(&gc, &ec));

    let cell = fresh(CellKind::BnLstm, d_x, d_h, seed);
    let Cell::BnLstm(p) = &cell else { unreachable!() };
    let lref = LstmRef { w_h: &p.base.w_h, w_x: &p.base.w_x, b: &p.base.b };
    let gains = BnGains {
        gamma_h: p.bn_h.gamma.data(),
        gamma_x: p.bn_x.gamma.data(),
        gamma_c: p.bn_c.gamma.data(),
        beta_c: p.bn_c.beta.as_ref().unwrap().data(),
        eps: p.bn_h.epsilon,
    };
    let (eh, ec) = bn_lstm_step(&lref, &gains, h.data(), c.data(), x.data(), m);
    let (gh, gc) = one_step(&cell, &h, &c, &x);
    worst = worst.max(max_abs_diff(&gh, &eh));
    worst = worst.max(max_abs_diff(&gc, &ec));
    worst
}

pub fn dummy_pop(d: usize) -> PopulationStats {
    PopulationStats::new(d, 1, StatsMode::PerTimestep, PopEstimator::Cumulative).unwrap()
}

/// Central-difference check of every trainable BN-LSTM tensor through an
/// unroll, with a randomly weighted sum of the final hidden state as loss.
pub fn bn_lstm_unroll_check(seed: u64, steps: usize, batch: usize, d_x: usize, d_h: usize) -> GradCheckReport {
    let cell = fresh(CellKind::BnLstm, d_x, d_h, seed);
    let Cell::BnLstm(p) = &cell else { unreachable!() };
    let x = random(&[steps, batch, d_x], &mut rng(seed + 1000));
    let weights = random(&[batch, d_h], &mut rng(seed + 2000));
    let noise = random(&[batch, d_h], &mut rng(seed + 3000)).map(|v| 0.3 * v);
    let eps = p.bn_h.epsilon;
    let inputs = vec![
        ("w_h", p.base.w_h.clone()),
        ("w_x", p.base.w_x.clone()),
        ("b", p.base.b.clone()),
        ("c0", p.base.c0.clone()),
        ("gamma_h", p.bn_h.gamma.clone()),
        ("gamma_x", p.bn_x.gamma.clone()),
        ("gamma_c", p.bn_c.gamma.clone()),
        ("beta_c", p.bn_c.beta.clone().unwrap()),
    ];
    // A shared initial hidden state cancels inside the recurrent normalizer,
    // so its gradient is zero and it is held fixed here.
    let h0 = p.base.h0.clone();
    let (ph, px, pc) = (dummy_pop(4 * d_h), dummy_pop(4 * d_h), dummy_pop(d_h));
    finite_diff_check_many(
        |tape, v| {
            let h0 = tape.leaf(h0.clone());
            let bound = BoundCell::BnLstm(BnLstmVars {
                base: LstmVars { w_h: v[0], w_x: v[1], b: v[2], h0, c0: v[3] },
                bn_h: BoundBn { gamma: v[4], beta: None, epsilon: eps },
                bn_x: BoundBn { gamma: v[5], beta: None, epsilon: eps },
                bn_c: BoundBn { gamma: v[6], beta: Some(v[7]), epsilon: eps },
                pop_h: &ph,
                pop_x: &px,
                pop_c: &pc,
            });
            let h = tape.broadcast_rows(h0, batch)?;
            let n = tape.leaf(noise.clone());
            let h = tape.add(h, n)?;
            let c = tape.broadcast_rows(v[3], batch)?;
            let out = unroll(tape, &bound, &x, StepState { h, c: Some(c) }, Phase::Train, 0)?;
            let w = tape.leaf(weights.clone());
            let y = tape.mul(out.last().h, w)?;
            tape.sum(y)
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}
