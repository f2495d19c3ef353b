//! Data sets and prediction heads: pixel-by-pixel MNIST from IDX files,
//! character-level corpora, a symbol recall task, and their metrics.

pub mod copy;
pub mod corpus;
pub mod digits;
pub mod heads;
pub mod idx;
pub mod metrics;
pub mod pixels;

pub use copy::CopyTask;
pub use corpus::{crop_offset, segment_corpus, CharCorpus, MarkovSource, Segment, SegmentSet, Split};
pub use heads::{classify_head, lm_head, BoundLinear, Linear};
pub use metrics::{metrics, Metrics, MetricsAccumulator};
pub use pixels::{apply_permutation, load_idx, permute_pixels, Permutation, PixelSequenceDataset};

use crate::error::Result;
use crate::tensor::Tensor;

/// Time-major minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[T × batch × d_x]`
    pub inputs: Tensor,
    /// One label per sequence, or one target per `(t, example)` stored
    /// time-major when the source predicts at every step.
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn steps(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.inputs.shape()[1]
    }
}

/// A fixed collection of sequences that can be gathered into batches.
pub trait SequenceSource {
    fn len(&self) -> usize;
    fn steps(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn classes(&self) -> usize;
    fn batch(&self, indices: &[usize]) -> Result<Batch>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether targets exist for every timestep rather than once per sequence.
    fn per_step_targets(&self) -> bool {
        false
    }
}
