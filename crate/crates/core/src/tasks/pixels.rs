//! MNIST images as pixel-by-pixel sequences.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{read_images, read_labels};
use super::{Batch, SequenceSource};
use crate::error::{Error, IdxErrorKind, Result};
use crate::tensor::Tensor;

/// Default seed of the fixed pixel order used for permuted MNIST.
pub const DEFAULT_PERMUTATION_SEED: u64 = 1234;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub order: Vec<usize>,
    pub seed: u64,
}

impl Permutation {
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (i, &p) in self.order.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

/// Images flattened in scanline order (or a fixed permutation of it), with
/// intensities scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSequenceDataset {
    /// `[N × T × 1]`
    pub sequences: Tensor,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub permutation: Option<Permutation>,
}

impl PixelSequenceDataset {
    pub fn from_bytes(pixels: &[u8], labels: Vec<usize>, height: usize, width: usize) -> Result<Self> {
        let t = height * width;
        if pixels.len() != labels.len() * t {
            return Err(Error::Data(format!(
                "{} pixel bytes do not hold {} images of {height}x{width}",
                pixels.len(),
                labels.len()
            )));
        }
        let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Ok(PixelSequenceDataset {
            sequences: Tensor::new(&[labels.len(), t, 1], data)?,
            labels,
            height,
            width,
            permutation: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.sequences.shape()[1]
    }

    /// Keeps only the first `steps` timesteps of every sequence.
    pub fn truncate_steps(&self, steps: usize) -> Result<Self> {
        let t = self.steps();
        if steps == 0 || steps > t {
            return Err(Error::Data(format!("cannot keep {steps} of {t} steps")));
        }
        let data = self
            .sequences
            .data()
            .chunks_exact(t)
            .flat_map(|s| s[..steps].iter().copied())
            .collect();
        Ok(PixelSequenceDataset {
            sequences: Tensor::new(&[self.len(), steps, 1], data)?,
            labels: self.labels.clone(),
            height: self.height,
            width: self.width,
            permutation: self.permutation.clone(),
        })
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Ok(PixelSequenceDataset {
            sequences: self.sequences.slice_rows(0, n)?,
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        PixelSequenceDataset {
            sequences: Tensor::zeros(&[0, self.steps(), 1]),
            labels: vec![],
            height: self.height,
            width: self.width,
            permutation: self.permutation.clone(),
        }
    }

    /// Average-pools `factor × factor` blocks (28×28 → 14×14 for factor 2).
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        if self.permutation.is_some() {
            return Err(Error::Data("downscale before permuting".into()));
        }
        if self.steps() != self.height * self.width {
            return Err(Error::Data("downscale needs complete images".into()));
        }
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Data(format!(
                "cannot pool {}x{} images by {factor}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let t_in = self.steps();
        let area = (factor * factor) as f64;
        let mut data = Vec::with_capacity(self.len() * h * w);
        for img in self.sequences.data().chunks_exact(t_in) {
            for r in 0..h {
                for c in 0..w {
                    let mut s = 0.0;
                    for dr in 0..factor {
                        for dc in 0..factor {
                            s += img[(r * factor + dr) * self.width + c * factor + dc];
                        }
                    }
                    data.push(s / area);
                }
            }
        }
        Ok(PixelSequenceDataset {
            sequences: Tensor::new(&[self.len(), h * w, 1], data)?,
            labels: self.labels.clone(),
            height: h,
            width: w,
            permutation: None,
        })
    }
}

/// Reads an image/label IDX pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<PixelSequenceDataset> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            kind: IdxErrorKind::CountMismatch {
                images: images.count,
                labels: labels.len(),
            },
        });
    }
    let labels = labels.into_iter().map(usize::from).collect();
    PixelSequenceDataset::from_bytes(&images.pixels, labels, images.rows, images.cols)
}

/// Applies one seeded permutation of the pixel order to every example.
pub fn permute_pixels(ds: &PixelSequenceDataset, seed: u64) -> Result<PixelSequenceDataset> {
    let mut order: Vec<usize> = (0..ds.steps()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    apply_permutation(ds, Permutation { order, seed })
}

/// Reorders every sequence so that step `i` reads original pixel `order[i]`.
pub fn apply_permutation(ds: &PixelSequenceDataset, perm: Permutation) -> Result<PixelSequenceDataset> {
    if ds.permutation.is_some() {
        return Err(Error::AlreadyPermuted);
    }
    let t = ds.steps();
    if t != ds.height * ds.width {
        return Err(Error::Data("permute complete images only".into()));
    }
    let mut seen = vec![false; t];
    if perm.order.len() != t || !perm.order.iter().all(|&p| p < t && !std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Data("permutation is not a bijection on the pixel indices".into()));
    }
    let mut data = Vec::with_capacity(ds.sequences.numel());
    for img in ds.sequences.data().chunks_exact(t) {
        data.extend(perm.order.iter().map(|&p| img[p]));
    }
    Ok(PixelSequenceDataset {
        sequences: Tensor::new(ds.sequences.shape(), data)?,
        labels: ds.labels.clone(),
        height: ds.height,
        width: ds.width,
        permutation: Some(perm),
    })
}

impl SequenceSource for PixelSequenceDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn steps(&self) -> usize {
        self.sequences.shape()[1]
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn classes(&self) -> usize {
        10
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let t = self.steps();
        let b = indices.len();
        let mut inputs = vec![0.0; t * b];
        for (j, &i) in indices.iter().enumerate() {
            let seq = self.sequences.row(i);
            for s in 0..t {
                inputs[s * b + j] = seq[s];
            }
        }
        Ok(Batch {
            inputs: Tensor::new(&[t, b, 1], inputs)?,
            targets: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}
