//! Recall task: read a sequence of random symbols and report the first.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, SequenceSource};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopyTask {
    pub symbols: Vec<Vec<usize>>,
    pub vocab: usize,
}

impl CopyTask {
    pub fn generate(examples: usize, length: usize, vocab: usize, seed: u64) -> Result<Self> {
        if length == 0 || vocab < 2 {
            return Err(Error::Config("copy task needs length ≥ 1 and at least 2 symbols".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols = (0..examples)
            .map(|_| (0..length).map(|_| rng.random_range(0..vocab)).collect())
            .collect();
        Ok(CopyTask { symbols, vocab })
    }
}

impl SequenceSource for CopyTask {
    fn len(&self) -> usize {
        self.symbols.len()
    }

    fn steps(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }

    fn input_dim(&self) -> usize {
        self.vocab
    }

    fn classes(&self) -> usize {
        self.vocab
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let (t, b, v) = (self.steps(), indices.len(), self.vocab);
        let mut inputs = vec![0.0; t * b * v];
        for (j, &i) in indices.iter().enumerate() {
            for (s, &sym) in self.symbols[i].iter().enumerate() {
                inputs[(s * b + j) * v + sym] = 1.0;
            }
        }
        Ok(Batch {
            inputs: Tensor::new(&[t, b, v], inputs)?,
            targets: indices.iter().map(|&i| self.symbols[i][0]).collect(),
        })
    }
}
