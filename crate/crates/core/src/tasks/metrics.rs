//! Cross-entropy, bits-per-character and accuracy from logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cross_entropy_nats: f64,
    pub bits_per_character: f64,
    pub accuracy: f64,
}

/// Index of the largest entry, preferring the lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// `ln Σ exp(row) − row[target]`
pub fn row_cross_entropy(row: &[f64], target: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - row[target]
}

/// Running sums over several logit blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub cross_entropy_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, logits: &Tensor, targets: &[usize]) -> Result<()> {
        let [n, k] = logits.dims2("metrics")?;
        if n != targets.len() {
            return Err(Error::shape("metrics", logits.shape(), &[targets.len()]));
        }
        if !logits.all_finite() {
            return Err(Error::NonFinite {
                context: "metrics logits".into(),
            });
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Domain {
                    op: "metrics",
                    detail: format!("target {t} outside {k} classes"),
                });
            }
            let row = logits.row(i);
            self.cross_entropy_sum += row_cross_entropy(row, t);
            self.correct += usize::from(argmax(row) == t);
        }
        self.count += n;
        Ok(())
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        let ce = self.cross_entropy_sum / n;
        Metrics {
            cross_entropy_nats: ce,
            bits_per_character: ce / std::f64::consts::LN_2,
            accuracy: self.correct as f64 / n,
        }
    }
}

pub fn metrics(logits: &Tensor, targets: &[usize]) -> Result<Metrics> {
    let mut acc = MetricsAccumulator::default();
    acc.add(logits, targets)?;
    Ok(acc.finish())
}
