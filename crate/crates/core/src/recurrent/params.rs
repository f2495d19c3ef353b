use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batchnorm::{BnParams, PopEstimator, PopulationStats, StatsMode};
use crate::error::{Error, Result};
use crate::optim::{orthogonal_with, stacked_identity, stacked_orthogonal};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::cells::{BnLstmVars, BnRnnVars, LstmVars, RnnVars};
use super::{BoundCell, StatsTrace};

/// Gate block order of the stacked LSTM matrices, recorded in checkpoints.
pub const GATE_ORDER: &str = "f,i,o,g";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Rnn,
    BnRnn,
    Lstm,
    BnLstm,
}

impl CellKind {
    pub fn is_normalized(self) -> bool {
        matches!(self, CellKind::BnRnn | CellKind::BnLstm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecurrentInit {
    /// Identity per gate block.
    Identity,
    /// Independent orthogonal matrix per gate block.
    Orthogonal,
}

/// Everything needed to construct a freshly initialized cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellInit {
    pub recurrent: RecurrentInit,
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub forget_bias: f64,
    pub t_max: usize,
    pub input_mode: StatsMode,
    pub estimator: PopEstimator,
}

impl Default for CellInit {
    fn default() -> Self {
        CellInit {
            recurrent: RecurrentInit::Orthogonal,
            gamma: 0.1,
            beta: 0.0,
            epsilon: crate::batchnorm::DEFAULT_EPSILON,
            forget_bias: 0.0,
            t_max: 1,
            input_mode: StatsMode::PerTimestep,
            estimator: PopEstimator::Cumulative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_h: Tensor,
    pub w_x: Tensor,
    pub b: Tensor,
    pub h0: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_h: Tensor,
    pub w_x: Tensor,
    pub b: Tensor,
    pub h0: Tensor,
    pub c0: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRnnParams {
    pub base: RnnParams,
    pub bn_h: BnParams,
    pub bn_x: BnParams,
    pub pop_h: PopulationStats,
    pub pop_x: PopulationStats,
}

/// LSTM parameters plus the three normalizers. `bn_h` and `bn_x` carry no
/// shift; `bn_c` has both `γ_c` and `β_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLstmParams {
    pub base: LstmParams,
    pub bn_h: BnParams,
    pub bn_x: BnParams,
    pub bn_c: BnParams,
    pub pop_h: PopulationStats,
    pub pop_x: PopulationStats,
    pub pop_c: PopulationStats,
}

impl RnnParams {
    pub fn init<R: Rng + ?Sized>(d_x: usize, d_h: usize, init: &CellInit, rng: &mut R) -> Self {
        let w_h = match init.recurrent {
            RecurrentInit::Identity => stacked_identity(d_h, 1, 1.0),
            RecurrentInit::Orthogonal => orthogonal_with(d_h, d_h, rng),
        };
        RnnParams {
            w_h,
            w_x: orthogonal_with(d_x, d_h, rng),
            b: Tensor::zeros(&[d_h]),
            h0: Tensor::zeros(&[d_h]),
        }
    }

    pub fn zeros(d_x: usize, d_h: usize) -> Self {
        RnnParams {
            w_h: Tensor::zeros(&[d_h, d_h]),
            w_x: Tensor::zeros(&[d_x, d_h]),
            b: Tensor::zeros(&[d_h]),
            h0: Tensor::zeros(&[d_h]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> RnnVars {
        RnnVars {
            w_h: tape.leaf(self.w_h.clone()),
            w_x: tape.leaf(self.w_x.clone()),
            b: tape.leaf(self.b.clone()),
            h0: tape.leaf(self.h0.clone()),
        }
    }

    fn check(&self) -> Result<()> {
        let d_h = self.h0.numel();
        consistent(&self.w_h, &[d_h, d_h])?;
        consistent(&self.w_x, &[self.w_x.rows(), d_h])?;
        consistent(&self.b, &[d_h])
    }
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(d_x: usize, d_h: usize, init: &CellInit, rng: &mut R) -> Self {
        let w_h = match init.recurrent {
            RecurrentInit::Identity => stacked_identity(d_h, 4, 1.0),
            RecurrentInit::Orthogonal => stacked_orthogonal(d_h, d_h, 4, rng),
        };
        let mut b = Tensor::zeros(&[4 * d_h]);
        b.data_mut()[..d_h].fill(init.forget_bias);
        LstmParams {
            w_h,
            w_x: stacked_orthogonal(d_x, d_h, 4, rng),
            b,
            h0: Tensor::zeros(&[d_h]),
            c0: Tensor::zeros(&[d_h]),
        }
    }

    pub fn zeros(d_x: usize, d_h: usize) -> Self {
        LstmParams {
            w_h: Tensor::zeros(&[d_h, 4 * d_h]),
            w_x: Tensor::zeros(&[d_x, 4 * d_h]),
            b: Tensor::zeros(&[4 * d_h]),
            h0: Tensor::zeros(&[d_h]),
            c0: Tensor::zeros(&[d_h]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmVars {
        LstmVars {
            w_h: tape.leaf(self.w_h.clone()),
            w_x: tape.leaf(self.w_x.clone()),
            b: tape.leaf(self.b.clone()),
            h0: tape.leaf(self.h0.clone()),
            c0: tape.leaf(self.c0.clone()),
        }
    }

    fn check(&self) -> Result<()> {
        let d_h = self.h0.numel();
        consistent(&self.w_h, &[d_h, 4 * d_h])?;
        consistent(&self.w_x, &[self.w_x.rows(), 4 * d_h])?;
        consistent(&self.b, &[4 * d_h])?;
        consistent(&self.c0, &[d_h])
    }
}

fn consistent(t: &Tensor, expect: &[usize]) -> Result<()> {
    if t.shape() != expect {
        return Err(Error::shape("cell parameters", t.shape(), expect));
    }
    Ok(())
}

fn populations(d: usize, init: &CellInit, mode: StatsMode) -> Result<PopulationStats> {
    PopulationStats::new(d, init.t_max, mode, init.estimator)
}

impl BnRnnParams {
    pub fn from_base(base: RnnParams, init: &CellInit) -> Result<Self> {
        base.check()?;
        let d_h = base.h0.numel();
        Ok(BnRnnParams {
            bn_h: BnParams::new(d_h, init.gamma, None, init.epsilon)?,
            bn_x: BnParams::new(d_h, init.gamma, None, init.epsilon)?,
            pop_h: populations(d_h, init, StatsMode::PerTimestep)?,
            pop_x: populations(d_h, init, init.input_mode)?,
            base,
        })
    }
}

impl BnLstmParams {
    pub fn from_base(base: LstmParams, init: &CellInit) -> Result<Self> {
        base.check()?;
        let d_h = base.h0.numel();
        Ok(BnLstmParams {
            bn_h: BnParams::new(4 * d_h, init.gamma, None, init.epsilon)?,
            bn_x: BnParams::new(4 * d_h, init.gamma, None, init.epsilon)?,
            bn_c: BnParams::new(d_h, init.gamma, Some(init.beta), init.epsilon)?,
            pop_h: populations(4 * d_h, init, StatsMode::PerTimestep)?,
            pop_x: populations(4 * d_h, init, init.input_mode)?,
            pop_c: populations(d_h, init, StatsMode::PerTimestep)?,
            base,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Rnn(RnnParams),
    BnRnn(BnRnnParams),
    Lstm(LstmParams),
    BnLstm(BnLstmParams),
}

impl Cell {
    pub fn new<R: Rng + ?Sized>(
        kind: CellKind,
        d_x: usize,
        d_h: usize,
        init: &CellInit,
        rng: &mut R,
    ) -> Result<Self> {
        if d_x == 0 || d_h == 0 {
            return Err(Error::Config("cell dimensions must be positive".into()));
        }
        Ok(match kind {
            CellKind::Rnn => Cell::Rnn(RnnParams::init(d_x, d_h, init, rng)),
            CellKind::BnRnn => {
                Cell::BnRnn(BnRnnParams::from_base(RnnParams::init(d_x, d_h, init, rng), init)?)
            }
            CellKind::Lstm => Cell::Lstm(LstmParams::init(d_x, d_h, init, rng)),
            CellKind::BnLstm => {
                Cell::BnLstm(BnLstmParams::from_base(LstmParams::init(d_x, d_h, init, rng), init)?)
            }
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Cell::Rnn(_) => CellKind::Rnn,
            Cell::BnRnn(_) => CellKind::BnRnn,
            Cell::Lstm(_) => CellKind::Lstm,
            Cell::BnLstm(_) => CellKind::BnLstm,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.h0.numel(),
            Cell::BnRnn(p) => p.base.h0.numel(),
            Cell::Lstm(p) => p.h0.numel(),
            Cell::BnLstm(p) => p.base.h0.numel(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.w_x.rows(),
            Cell::BnRnn(p) => p.base.w_x.rows(),
            Cell::Lstm(p) => p.w_x.rows(),
            Cell::BnLstm(p) => p.base.w_x.rows(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundCell<'_> {
        match self {
            Cell::Rnn(p) => BoundCell::Rnn(p.bind(tape)),
            Cell::BnRnn(p) => BoundCell::BnRnn(BnRnnVars {
                base: p.base.bind(tape),
                bn_h: p.bn_h.bind(tape),
                bn_x: p.bn_x.bind(tape),
                pop_h: &p.pop_h,
                pop_x: &p.pop_x,
            }),
            Cell::Lstm(p) => BoundCell::Lstm(p.bind(tape)),
            Cell::BnLstm(p) => BoundCell::BnLstm(BnLstmVars {
                base: p.base.bind(tape),
                bn_h: p.bn_h.bind(tape),
                bn_x: p.bn_x.bind(tape),
                bn_c: p.bn_c.bind(tape),
                pop_h: &p.pop_h,
                pop_x: &p.pop_x,
                pop_c: &p.pop_c,
            }),
        }
    }

    /// Trainable tensors with stable names, in [`BoundCell::param_vars`] order.
    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        fn rnn(p: &RnnParams) -> Vec<(&'static str, &Tensor)> {
            vec![("w_h", &p.w_h), ("w_x", &p.w_x), ("b", &p.b), ("h0", &p.h0)]
        }
        fn lstm(p: &LstmParams) -> Vec<(&'static str, &Tensor)> {
            vec![
                ("w_h", &p.w_h),
                ("w_x", &p.w_x),
                ("b", &p.b),
                ("h0", &p.h0),
                ("c0", &p.c0),
            ]
        }
        match self {
            Cell::Rnn(p) => rnn(p),
            Cell::BnRnn(p) => {
                let mut v = rnn(&p.base);
                v.extend([("gamma_h", &p.bn_h.gamma), ("gamma_x", &p.bn_x.gamma)]);
                v
            }
            Cell::Lstm(p) => lstm(p),
            Cell::BnLstm(p) => {
                let mut v = lstm(&p.base);
                v.extend([
                    ("gamma_h", &p.bn_h.gamma),
                    ("gamma_x", &p.bn_x.gamma),
                    ("gamma_c", &p.bn_c.gamma),
                ]);
                v.extend(p.bn_c.beta.as_ref().map(|b| ("beta_c", b)));
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        fn rnn(p: &mut RnnParams) -> Vec<&mut Tensor> {
            vec![&mut p.w_h, &mut p.w_x, &mut p.b, &mut p.h0]
        }
        fn lstm(p: &mut LstmParams) -> Vec<&mut Tensor> {
            vec![&mut p.w_h, &mut p.w_x, &mut p.b, &mut p.h0, &mut p.c0]
        }
        match self {
            Cell::Rnn(p) => rnn(p),
            Cell::BnRnn(p) => {
                let mut v = rnn(&mut p.base);
                v.extend([&mut p.bn_h.gamma, &mut p.bn_x.gamma]);
                v
            }
            Cell::Lstm(p) => lstm(p),
            Cell::BnLstm(p) => {
                let mut v = lstm(&mut p.base);
                v.extend([&mut p.bn_h.gamma, &mut p.bn_x.gamma, &mut p.bn_c.gamma]);
                v.extend(p.bn_c.beta.as_mut());
                v
            }
        }
    }

    /// Named population statistics (`h`, `x`, `c`) for normalized cells.
    pub fn populations(&self) -> Vec<(&'static str, &PopulationStats)> {
        match self {
            Cell::BnRnn(p) => vec![("h", &p.pop_h), ("x", &p.pop_x)],
            Cell::BnLstm(p) => vec![("h", &p.pop_h), ("x", &p.pop_x), ("c", &p.pop_c)],
            _ => vec![],
        }
    }

    pub fn populations_mut(&mut self) -> Vec<(&'static str, &mut PopulationStats)> {
        match self {
            Cell::BnRnn(p) => vec![("h", &mut p.pop_h), ("x", &mut p.pop_x)],
            Cell::BnLstm(p) => vec![
                ("h", &mut p.pop_h),
                ("x", &mut p.pop_x),
                ("c", &mut p.pop_c),
            ],
            _ => vec![],
        }
    }

    pub fn reset_populations(&mut self) {
        for (_, p) in self.populations_mut() {
            p.reset();
        }
    }

    /// Folds a training-phase trace into the population statistics.
    pub fn absorb(&mut self, trace: &StatsTrace, t_offset: usize) -> Result<()> {
        for (name, pop) in self.populations_mut() {
            let entries = match name {
                "h" => &trace.h,
                "x" => &trace.x,
                _ => &trace.c,
            };
            for (k, stats) in entries.iter().enumerate() {
                let t = match pop.mode() {
                    StatsMode::PerTimestep => t_offset + k + 1,
                    StatsMode::Sequencewise => 1,
                };
                pop.update(t, stats)?;
            }
        }
        Ok(())
    }
}
