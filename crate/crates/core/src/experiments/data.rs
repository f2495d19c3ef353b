//! Materializes the data sets a configuration asks for.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tasks::digits::{synthetic_digits, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use crate::tasks::{
    load_idx, permute_pixels, segment_corpus, CharCorpus, CopyTask, MarkovSource, PixelSequenceDataset,
    SegmentSet, SequenceSource, Split,
};

use super::config::{ExperimentConfig, TaskKind};

/// Training and validation data for one run.
pub enum TaskData {
    /// Fixed example sets with one label per sequence.
    Classification {
        train: Box<dyn SequenceSource + Send + Sync>,
        valid: Box<dyn SequenceSource + Send + Sync>,
    },
    /// A corpus re-segmented every epoch.
    Language { corpus: CharCorpus, seq_len: usize },
}

impl TaskData {
    pub fn input_dim(&self) -> usize {
        match self {
            TaskData::Classification { train, .. } => train.input_dim(),
            TaskData::Language { corpus, .. } => corpus.vocab_size(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            TaskData::Classification { train, .. } => train.classes(),
            TaskData::Language { corpus, .. } => corpus.vocab_size(),
        }
    }

    /// Sequence length seen during training.
    pub fn steps(&self) -> usize {
        match self {
            TaskData::Classification { train, .. } => train.steps(),
            TaskData::Language { seq_len, .. } => *seq_len,
        }
    }

    /// Training examples for `epoch`: the fixed set, or a fresh crop of the
    /// training split.
    pub fn train_epoch(&self, epoch_seed: u64) -> Result<EpochSource<'_>> {
        match self {
            TaskData::Classification { train, .. } => Ok(EpochSource::Borrowed(train.as_ref())),
            TaskData::Language { corpus, seq_len } => Ok(EpochSource::Owned(SegmentSet {
                segments: segment_corpus(corpus, Split::Train, *seq_len, Some(epoch_seed))?,
                vocab_size: corpus.vocab_size(),
            })),
        }
    }

    /// Validation examples, segmented deterministically for language models.
    pub fn valid(&self) -> Result<EpochSource<'_>> {
        match self {
            TaskData::Classification { valid, .. } => Ok(EpochSource::Borrowed(valid.as_ref())),
            TaskData::Language { corpus, seq_len } => Ok(EpochSource::Owned(segments(corpus, Split::Valid, *seq_len)?)),
        }
    }

    /// Number of full minibatches in one training epoch.
    pub fn updates_per_epoch(&self, batch: usize) -> Result<usize> {
        let n = match self {
            TaskData::Classification { train, .. } => train.len(),
            TaskData::Language { corpus, seq_len } => {
                let len = corpus.split_ids(Split::Train).len();
                if len < seq_len + 1 {
                    0
                } else {
                    (len - 1) / seq_len
                }
            }
        };
        let per = n / batch;
        if per == 0 {
            return Err(Error::Config(format!(
                "{n} training sequences cannot fill a batch of {batch}"
            )));
        }
        Ok(per)
    }
}

/// Segments of a split with offset 0.
pub fn segments(corpus: &CharCorpus, split: Split, length: usize) -> Result<SegmentSet> {
    Ok(SegmentSet {
        segments: segment_corpus(corpus, split, length, None)?,
        vocab_size: corpus.vocab_size(),
    })
}

pub enum EpochSource<'a> {
    Borrowed(&'a (dyn SequenceSource + Send + Sync)),
    Owned(SegmentSet),
}

impl EpochSource<'_> {
    pub fn get(&self) -> &dyn SequenceSource {
        match self {
            EpochSource::Borrowed(s) => *s,
            EpochSource::Owned(s) => s,
        }
    }
}

fn prepare_pixels(cfg: &ExperimentConfig, ds: PixelSequenceDataset, n: usize) -> Result<PixelSequenceDataset> {
    let mut ds = ds.take(n)?;
    if cfg.downscale > 1 {
        ds = ds.downscale(cfg.downscale)?;
    }
    if cfg.task == TaskKind::Pmnist {
        ds = permute_pixels(&ds, cfg.permutation_seed)?;
    }
    if cfg.seq_len > 0 && cfg.seq_len < ds.steps() {
        ds = ds.truncate_steps(cfg.seq_len)?;
    }
    Ok(ds)
}

fn load_mnist(cfg: &ExperimentConfig) -> Result<(PixelSequenceDataset, PixelSequenceDataset)> {
    let (train, valid) = match &cfg.data_path {
        Some(dir) => (
            load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?,
            load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?,
        ),
        None => {
            let from = |n, seed| {
                let set = synthetic_digits(n, seed);
                let labels = set.labels.iter().map(|&l| usize::from(l)).collect();
                PixelSequenceDataset::from_bytes(&set.images.pixels, labels, set.images.rows, set.images.cols)
            };
            (
                from(cfg.train_examples, cfg.synthetic_seed)?,
                from(cfg.valid_examples, cfg.synthetic_seed.wrapping_add(0x9e37_79b9))?,
            )
        }
    };
    if train.len() < cfg.train_examples || valid.len() < cfg.valid_examples {
        return Err(Error::Data(format!(
            "requested {} train / {} valid examples but found {} / {}",
            cfg.train_examples,
            cfg.valid_examples,
            train.len(),
            valid.len()
        )));
    }
    Ok((
        prepare_pixels(cfg, train, cfg.train_examples)?,
        prepare_pixels(cfg, valid, cfg.valid_examples)?,
    ))
}

fn load_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().into_iter().map(char::from).collect(),
    })
}

/// Builds the data for `cfg.task`; MNIST and the Markov source fall back to
/// synthetic generators when no path is given.
pub fn load_task(cfg: &ExperimentConfig) -> Result<TaskData> {
    cfg.validate()?;
    match cfg.task {
        TaskKind::SeqMnist | TaskKind::Pmnist => {
            let (train, valid) = load_mnist(cfg)?;
            Ok(TaskData::Classification {
                train: Box::new(train),
                valid: Box::new(valid),
            })
        }
        TaskKind::Copy => Ok(TaskData::Classification {
            train: Box::new(CopyTask::generate(cfg.train_examples, cfg.seq_len, cfg.copy_vocab, cfg.synthetic_seed)?),
            valid: Box::new(CopyTask::generate(
                cfg.valid_examples,
                cfg.seq_len,
                cfg.copy_vocab,
                cfg.synthetic_seed.wrapping_add(1),
            )?),
        }),
        TaskKind::CharLm | TaskKind::Markov => {
            let text = match (&cfg.data_path, cfg.task) {
                (Some(path), _) => load_text(path)?,
                (None, TaskKind::Markov) => {
                    MarkovSource::random(cfg.markov_symbols, cfg.synthetic_seed).generate(cfg.corpus_chars, cfg.synthetic_seed.wrapping_add(1))
                }
                _ => return Err(Error::Config("char-lm needs data_path".into())),
            };
            let total = text.chars().count();
            let (train, valid) = if cfg.train_chars == 0 {
                (total * 9 / 10, total / 20)
            } else {
                (cfg.train_chars, cfg.valid_chars)
            };
            Ok(TaskData::Language {
                corpus: CharCorpus::from_text(&text, train, valid)?,
                seq_len: cfg.seq_len,
            })
        }
    }
}
