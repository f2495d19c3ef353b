//! Procedurally drawn handwritten-style digits, written as MNIST-format IDX
//! files so that the pixel tasks run without the original data set.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{write_images, write_labels, IdxImages};
use crate::error::Result;

pub const SIDE: usize = 28;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

type Point = (f64, f64);

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Vec<Point> {
    let n = 16;
    (0..=n)
        .map(|k| {
            let a = (from_deg + (to_deg - from_deg) * k as f64 / n as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke skeletons in a unit box, `y` pointing down.
fn glyph(digit: usize) -> Vec<Vec<Point>> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.42, 0.0, 360.0)],
        1 => vec![vec![(0.36, 0.24), (0.52, 0.08), (0.52, 0.92)]],
        2 => {
            let mut top = arc(0.5, 0.32, 0.24, 0.22, 200.0, 380.0);
            top.extend([(0.24, 0.9), (0.8, 0.9)]);
            vec![top]
        }
        3 => vec![
            arc(0.48, 0.29, 0.22, 0.2, 210.0, 450.0),
            arc(0.48, 0.69, 0.25, 0.21, 270.0, 500.0),
        ],
        4 => vec![vec![(0.64, 0.92), (0.64, 0.08), (0.2, 0.64), (0.82, 0.64)]],
        5 => {
            let mut s = vec![(0.76, 0.1), (0.32, 0.1), (0.29, 0.46)];
            s.extend(arc(0.48, 0.65, 0.26, 0.25, 240.0, 500.0));
            vec![s]
        }
        6 => vec![
            vec![(0.7, 0.08), (0.45, 0.3), (0.3, 0.6)],
            arc(0.5, 0.68, 0.21, 0.22, 0.0, 360.0),
        ],
        7 => vec![vec![(0.2, 0.1), (0.8, 0.1), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.29, 0.18, 0.19, 0.0, 360.0),
            arc(0.5, 0.7, 0.22, 0.21, 0.0, 360.0),
        ],
        _ => vec![
            arc(0.48, 0.32, 0.21, 0.22, 0.0, 360.0),
            vec![(0.69, 0.34), (0.62, 0.92)],
        ],
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (ex, ey) = (p.0 - a.0 - s * dx, p.1 - a.1 - s * dy);
    (ex * ex + ey * ey).sqrt()
}

/// Renders one randomly deformed instance of `digit` as `SIDE × SIDE` bytes.
pub fn render_digit<R: Rng + ?Sized>(digit: usize, rng: &mut R) -> Vec<u8> {
    let angle: f64 = rng.random_range(-0.2..0.2);
    let shear = rng.random_range(-0.3..0.3);
    let (sx, sy) = (rng.random_range(0.75..1.05), rng.random_range(0.85..1.05));
    let (tx, ty) = (rng.random_range(-0.07..0.07), rng.random_range(-0.06..0.06));
    let thickness = rng.random_range(0.05..0.09);
    let wobble: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.035..0.035));
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let (ca, sa) = (angle.cos(), angle.sin());

    let warp = |(x, y): Point| -> Point {
        let (u, v) = (x - 0.5, y - 0.5);
        let u = u + wobble[0] * (3.0 * v + phase).sin() + wobble[1] * v;
        let v = v + wobble[2] * (3.0 * u + phase).cos() + wobble[3] * u;
        let (u, v) = (sx * (u + shear * v), sy * v);
        (ca * u - sa * v + 0.5 + tx, sa * u + ca * v + 0.5 + ty)
    };
    let strokes: Vec<Vec<Point>> = glyph(digit)
        .into_iter()
        .map(|s| s.into_iter().map(|p| warp(p)).collect())
        .collect();

    // The glyph box maps onto the central 20×20 pixels, as in MNIST.
    let scale = 20.0;
    let margin = (SIDE as f64 - scale) / 2.0;
    let mut out = vec![0u8; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let p = (
                (c as f64 + 0.5 - margin) / scale,
                (r as f64 + 0.5 - margin) / scale,
            );
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let ink = ((thickness - d) * scale + 0.5).clamp(0.0, 1.0);
            out[r * SIDE + c] = (ink * 255.0).round() as u8;
        }
    }
    out
}

/// `n` images with uniformly drawn labels.
pub fn synthetic_digits(n: usize, seed: u64) -> DigitSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let digit = rng.random_range(0..10usize);
        pixels.extend(render_digit(digit, &mut rng));
        labels.push(digit as u8);
    }
    DigitSet {
        images: IdxImages {
            count: n,
            rows: SIDE,
            cols: SIDE,
            pixels,
        },
        labels,
    }
}

pub struct DigitSet {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

/// Writes train and test IDX pairs under the standard MNIST file names.
pub fn write_synthetic_mnist(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let train = synthetic_digits(n_train, seed);
    write_images(&dir.join(TRAIN_IMAGES), &train.images)?;
    write_labels(&dir.join(TRAIN_LABELS), &train.labels)?;
    let test = synthetic_digits(n_test, seed.wrapping_add(0x9e37_79b9));
    write_images(&dir.join(TEST_IMAGES), &test.images)?;
    write_labels(&dir.join(TEST_LABELS), &test.labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_digit_draws_ink_inside_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in 0..10 {
            let img = render_digit(d, &mut rng);
            let ink: u32 = img.iter().map(|&p| u32::from(p)).sum();
            assert!(ink > 255 * 20, "digit {d} is nearly blank");
            let border = (0..SIDE).map(|i| img[i] as u32 + img[SIDE * SIDE - 1 - i] as u32).sum::<u32>();
            assert_eq!(border, 0, "digit {d} touches the frame");
        }
    }

    #[test]
    fn seeded() {
        let a = synthetic_digits(5, 3);
        let b = synthetic_digits(5, 3);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn classes_differ_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = |d: usize, rng: &mut ChaCha8Rng| {
            let mut acc = vec![0.0; SIDE * SIDE];
            for _ in 0..20 {
                for (a, p) in acc.iter_mut().zip(render_digit(d, rng)) {
                    *a += f64::from(p) / 20.0;
                }
            }
            acc
        };
        let one = mean(1, &mut rng);
        let zero = mean(0, &mut rng);
        let dist: f64 = one.iter().zip(&zero).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist.sqrt() > 255.0);
    }
}
