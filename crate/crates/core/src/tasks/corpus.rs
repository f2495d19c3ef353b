//! Character-level corpora and their segmentation into training windows.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, SequenceSource};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stand-in for symbols absent from the training split.
pub const UNKNOWN_SYMBOL: char = '\u{FFFD}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharCorpus {
    /// Sorted training symbols followed by [`UNKNOWN_SYMBOL`].
    pub vocabulary: Vec<char>,
    pub ids: Vec<usize>,
    pub splits: [Range<usize>; 3],
}

impl CharCorpus {
    /// Splits `text` into `train_chars`, `valid_chars` and the remainder.
    pub fn from_text(text: &str, train_chars: usize, valid_chars: usize) -> Result<Self> {
        let chars: Vec<char> = text.chars().collect();
        if train_chars + valid_chars > chars.len() {
            return Err(Error::Data(format!(
                "corpus has {} characters, fewer than the {} requested for train and valid",
                chars.len(),
                train_chars + valid_chars
            )));
        }
        let seen: BTreeSet<char> = chars[..train_chars].iter().copied().collect();
        let mut vocabulary: Vec<char> = seen.into_iter().collect();
        let unknown = vocabulary.len();
        vocabulary.push(UNKNOWN_SYMBOL);
        let ids = chars
            .iter()
            .map(|c| vocabulary[..unknown].binary_search(c).unwrap_or(unknown))
            .collect();
        let a = train_chars;
        let b = a + valid_chars;
        Ok(CharCorpus {
            vocabulary,
            ids,
            splits: [0..a, a..b, b..chars.len()],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn unknown_id(&self) -> usize {
        self.vocabulary.len() - 1
    }

    pub fn split_ids(&self, split: Split) -> &[usize] {
        let r = match split {
            Split::Train => &self.splits[0],
            Split::Valid => &self.splits[1],
            Split::Test => &self.splits[2],
        };
        &self.ids[r.clone()]
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.vocabulary[i]).collect()
    }
}

/// One language-modeling example: inputs and their next-symbol targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Start of the crop for a split of `len` symbols: uniform over
/// `0..=(len − 1) mod length` under `epoch_seed`, and 0 without a seed.
pub fn crop_offset(len: usize, length: usize, epoch_seed: Option<u64>) -> usize {
    let slack = (len.saturating_sub(1)) % length.max(1);
    match epoch_seed {
        Some(seed) => ChaCha8Rng::seed_from_u64(seed).random_range(0..=slack),
        None => 0,
    }
}

/// Cuts a split into nonoverlapping windows of `length` after a crop.
pub fn segment_corpus(
    corpus: &CharCorpus,
    split: Split,
    length: usize,
    epoch_seed: Option<u64>,
) -> Result<Vec<Segment>> {
    let ids = corpus.split_ids(split);
    if length == 0 || ids.len() < length + 1 {
        return Err(Error::SplitTooShort {
            split: split.to_string(),
            available: ids.len(),
            required: length + 1,
        });
    }
    let offset = crop_offset(ids.len(), length, epoch_seed);
    let count = (ids.len() - 1 - offset) / length;
    Ok((0..count)
        .map(|k| {
            let s = offset + k * length;
            Segment {
                inputs: ids[s..s + length].to_vec(),
                targets: ids[s + 1..s + length + 1].to_vec(),
            }
        })
        .collect())
}

/// Segments paired with the vocabulary width used for one-hot inputs.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
    pub vocab_size: usize,
}

impl SequenceSource for SegmentSet {
    fn len(&self) -> usize {
        self.segments.len()
    }

    fn steps(&self) -> usize {
        self.segments.first().map_or(0, |s| s.inputs.len())
    }

    fn input_dim(&self) -> usize {
        self.vocab_size
    }

    fn classes(&self) -> usize {
        self.vocab_size
    }

    fn per_step_targets(&self) -> bool {
        true
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let t = self.steps();
        let b = indices.len();
        let v = self.vocab_size;
        let mut inputs = vec![0.0; t * b * v];
        let mut targets = vec![0; t * b];
        for (j, &i) in indices.iter().enumerate() {
            let seg = &self.segments[i];
            for s in 0..t {
                inputs[(s * b + j) * v + seg.inputs[s]] = 1.0;
                targets[s * b + j] = seg.targets[s];
            }
        }
        Ok(Batch {
            inputs: Tensor::new(&[t, b, v], inputs)?,
            targets,
        })
    }
}

/// First-order Markov chain over a small alphabet; a stationary source
/// whose entropy rate is known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSource {
    pub symbols: Vec<char>,
    pub transitions: Vec<Vec<f64>>,
}

impl MarkovSource {
    /// Random transition rows; cubing uniform draws makes rows peaked, so
    /// the entropy rate sits well below `log2(symbols)`.
    pub fn random(symbols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transitions = (0..symbols)
            .map(|_| {
                let w: Vec<f64> = (0..symbols).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|x| x / z).collect()
            })
            .collect();
        MarkovSource {
            symbols: (0..symbols).map(|i| (b'a' + i as u8) as char).collect(),
            transitions,
        }
    }

    pub fn generate(&self, len: usize, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<WeightedIndex<f64>> = self
            .transitions
            .iter()
            .map(|r| WeightedIndex::new(r).expect("rows are positive"))
            .collect();
        let start = WeightedIndex::new(self.stationary()).expect("stationary is a distribution");
        let mut state = start.sample(&mut rng);
        let mut out = String::with_capacity(len);
        for _ in 0..len {
            out.push(self.symbols[state]);
            state = rows[state].sample(&mut rng);
        }
        out
    }

    /// Stationary distribution by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.symbols.len();
        let mut p = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, q) in row.iter().enumerate() {
                    next[j] += p[i] * q;
                }
            }
            let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if delta < 1e-15 {
                break;
            }
        }
        p
    }

    /// `Σ_i π_i H(P_i)` in bits per symbol.
    pub fn entropy_rate_bits(&self) -> f64 {
        self.stationary()
            .iter()
            .zip(&self.transitions)
            .map(|(pi, row)| pi * row.iter().filter(|q| **q > 0.0).map(|q| -q * q.log2()).sum::<f64>())
            .sum()
    }
}
