mod common;

use bnrnn_core::recurrent::{init_state, unroll, Cell, CellKind, Phase, StepState};
use bnrnn_core::{Tape, Tensor, Var};
use common::checks::*;
use common::*;

#[test]
fn every_cell_matches_its_formula() {
    for seed in 0..10 {
        let worst = formula_mismatch(seed);
        assert!(worst < 1e-12, "seed {seed}: {worst}");
    }
}

#[test]
fn zero_lstm_halves_the_cell() {
    let cell = Cell::Lstm(bnrnn_core::recurrent::LstmParams::zeros(1, 1));
    let (h, c) = one_step(&cell, &Tensor::zeros(&[1, 1]), &Tensor::full(&[1, 1], 2.0), &Tensor::zeros(&[1, 1]));
    assert_eq!(c, vec![1.0]);
    assert!((h[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
    assert!((h[0] - 0.380797).abs() < 1e-6);
}

#[test]
fn zero_lstm_unroll_decays_geometrically() {
    let mut p = bnrnn_core::recurrent::LstmParams::zeros(2, 3);
    p.c0 = Tensor::full(&[3], 2.0);
    let cell = Cell::Lstm(p);
    let mut tape = Tape::new();
    let bound = cell.bind(&mut tape);
    let init = init_state(&mut tape, &bound, 2, 0.0, &mut rng(0)).unwrap();
    let out = unroll(&mut tape, &bound, &Tensor::zeros(&[5, 2, 2]), init, Phase::Train, 0).unwrap();
    for (k, s) in out.states.iter().enumerate() {
        let expect = 2.0 * 0.5f64.powi(k as i32 + 1);
        for v in tape.value(s.c.unwrap()).data() {
            assert!((v - expect).abs() < 1e-15);
        }
        for v in tape.value(s.h).data() {
            assert!((v - 0.5 * expect.tanh()).abs() < 1e-15);
        }
    }
}

#[test]
fn hidden_states_stay_bounded() {
    for kind in [CellKind::Lstm, CellKind::BnLstm, CellKind::Rnn, CellKind::BnRnn] {
        let mut cell = fresh(kind, 2, 4, 9);
        for t in cell.params_mut() {
            *t = t.map(|v| 20.0 * v);
        }
        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape);
        let init = init_state(&mut tape, &bound, 3, 0.5, &mut rng(1)).unwrap();
        let x = random(&[6, 3, 2], &mut rng(2)).map(|v| 10.0 * v);
        let out = unroll(&mut tape, &bound, &x, init, Phase::Train, 0).unwrap();
        for s in &out.states {
            assert!(tape.value(s.h).data().iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
        }
    }
}

#[test]
fn initial_state_noise() {
    let mut cell = fresh(CellKind::Lstm, 1, 6, 3);
    let Cell::Lstm(p) = &mut cell else { unreachable!() };
    p.h0 = Tensor::vector(vec![0.5, -0.25, 0.0, 1.0, 2.0, -3.0]);
    let h0 = p.h0.data().to_vec();

    let draw = |std: f64, seed: u64| {
        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape);
        let s = init_state(&mut tape, &bound, 1000, std, &mut rng(seed)).unwrap();
        tape.value(s.h).clone()
    };
    let exact = draw(0.0, 1);
    assert!(exact.data().chunks(6).all(|row| row == h0.as_slice()));
    assert_eq!(draw(0.1, 7), draw(0.1, 7));

    let noisy = draw(0.1, 7);
    for j in 0..6 {
        let dev: Vec<f64> = (0..1000).map(|i| noisy.data()[i * 6 + j] - h0[j]).collect();
        let mean = dev.iter().sum::<f64>() / 1000.0;
        let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "unit {j}: std {sd}");
    }
}

/// Unrolls `cell` from an explicit `[batch × d_h]` initial cell state.
fn unroll_from(cell: &Cell, x: &Tensor, c0: &Tensor) -> (Tape, Vec<StepState>, Var) {
    let mut tape = Tape::new();
    let bound = cell.bind(&mut tape);
    let batch = c0.shape()[0];
    let h0 = tape.leaf(Tensor::zeros(&[batch, c0.shape()[1]]));
    let noise = random(&[batch, c0.shape()[1]], &mut rng(77)).map(|v| 0.1 * v);
    let h0 = {
        let n = tape.leaf(noise);
        tape.add(h0, n).unwrap()
    };
    let c = tape.leaf(c0.clone());
    let out = unroll(&mut tape, &bound, x, StepState { h: h0, c: Some(c) }, Phase::Train, 0).unwrap();
    (tape, out.states, c)
}

#[test]
fn open_cell_path_carries_gradient_unchanged() {
    let d = 4;
    let mut cell = fresh(CellKind::BnLstm, 3, d, 5);
    let Cell::BnLstm(p) = &mut cell else { unreachable!() };
    let b = p.base.b.data_mut();
    b[..d].fill(50.0);
    b[d..2 * d].fill(-50.0);
    let x = random(&[7, 3, 3], &mut rng(6));
    let c0 = random(&[3, d], &mut rng(8));
    for j in 0..d {
        for row in 0..3 {
            let (mut tape, states, c) = unroll_from(&cell, &x, &c0);
            let c_t = states.last().unwrap().c.unwrap();
            let mut pick = Tensor::zeros(&[3, d]);
            pick.data_mut()[row * d + j] = 1.0;
            let pick = tape.leaf(pick);
            let sel = tape.mul(c_t, pick).unwrap();
            let loss = tape.sum(sel).unwrap();
            let g = tape.backward(loss).unwrap().wrt(c);
            for (k, v) in g.data().iter().enumerate() {
                let expect = if k == row * d + j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12, "entry {k}: {v}");
            }
        }
    }
}

#[test]
fn shared_input_shift_cancels_only_under_normalization() {
    for (kind, should_match) in [(CellKind::BnLstm, true), (CellKind::Lstm, false)] {
        let cell = fresh(kind, 3, 5, 12);
        let x = random(&[6, 4, 3], &mut rng(13));
        let shift = [0.7, -1.1, 0.4];
        let shifted = Tensor::new(
            x.shape(),
            x.data().iter().enumerate().map(|(i, v)| v + shift[i % 3]).collect(),
        )
        .unwrap();
        let c0 = random(&[4, 5], &mut rng(14));
        let (ta, sa, _) = unroll_from(&cell, &x, &c0);
        let (tb, sb, _) = unroll_from(&cell, &shifted, &c0);
        let diff = max_abs_diff(ta.value(sa.last().unwrap().h).data(), tb.value(sb.last().unwrap().h).data());
        if should_match {
            assert!(diff < 1e-10, "{kind:?} changed by {diff}");
        } else {
            assert!(diff > 1e-3, "{kind:?} changed by only {diff}");
        }
    }
}

#[test]
fn bn_lstm_unroll_gradients_match_finite_differences() {
    let report = bn_lstm_unroll_check(21, 5, 3, 2, 3);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
