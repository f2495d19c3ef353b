use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Orthogonal matrix from the QR factor of a seeded Gaussian draw.
///
/// For `rows >= cols` the columns are orthonormal, otherwise the rows are.
pub fn orthogonal_init(rows: usize, cols: usize, seed: u64) -> Tensor {
    orthogonal_with(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn orthogonal_with<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = Tensor::randn(&[short, tall], 1.0, rng);
    // Each row of `g` is one column of the tall matrix being factored.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(short);
    for j in 0..short {
        let mut v = g.row(j).to_vec();
        // Modified Gram-Schmidt, applied twice for numerical orthogonality.
        // The diagonal of R is the positive norm, which fixes the sign.
        for _ in 0..2 {
            for qi in &q {
                let dot: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= dot * qk;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    let data = out.data_mut();
    for (j, qj) in q.iter().enumerate() {
        for (i, &val) in qj.iter().enumerate() {
            if rows >= cols {
                data[i * cols + j] = val;
            } else {
                data[j * cols + i] = val;
            }
        }
    }
    out
}

pub fn identity_init(d: usize, gain: f64) -> Tensor {
    let mut t = Tensor::eye(d);
    t.scale_inplace(gain);
    t
}

/// `[rows × blocks·d]` matrix whose `rows × d` blocks are independently orthogonal.
pub fn stacked_orthogonal<R: Rng + ?Sized>(rows: usize, d: usize, blocks: usize, rng: &mut R) -> Tensor {
    let parts: Vec<Tensor> = (0..blocks).map(|_| orthogonal_with(rows, d, rng)).collect();
    hstack(rows, d, &parts)
}

/// `[d × blocks·d]` matrix with `gain · I` in every block.
pub fn stacked_identity(d: usize, blocks: usize, gain: f64) -> Tensor {
    let parts: Vec<Tensor> = (0..blocks).map(|_| identity_init(d, gain)).collect();
    hstack(d, d, &parts)
}

fn hstack(rows: usize, d: usize, parts: &[Tensor]) -> Tensor {
    let width = d * parts.len();
    let mut out = Tensor::zeros(&[rows, width]);
    let data = out.data_mut();
    for (b, p) in parts.iter().enumerate() {
        for i in 0..rows {
            data[i * width + b * d..i * width + (b + 1) * d].copy_from_slice(p.row(i));
        }
    }
    out
}
