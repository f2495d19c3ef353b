//! Affine readouts from hidden states to class logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `logits = h · weight + bias`, with `weight` of shape `d_h × classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn zeros(d_in: usize, classes: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[d_in, classes]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    /// Glorot-uniform weights and zero bias.
    pub fn init<R: Rng + ?Sized>(d_in: usize, classes: usize, rng: &mut R) -> Self {
        let a = (6.0 / (d_in + classes) as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[d_in, classes], -a, a, rng),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

/// Logits for each sequence from its final hidden state.
pub fn classify_head(tape: &mut Tape, h_last: Var, head: &BoundLinear) -> Result<Var> {
    let z = tape.matmul(h_last, head.weight)?;
    tape.add_rows(z, head.bias)
}

/// Logits for every timestep, stacked time-major into `[(T·batch) × classes]`.
pub fn lm_head(tape: &mut Tape, h_all: &[Var], head: &BoundLinear) -> Result<Var> {
    let stacked = tape.concat_rows(h_all)?;
    classify_head(tape, stacked, head)
}
