//! Independent straight-line reference implementations over plain slices.
#![allow(dead_code)]

use bnrnn_core::recurrent::Cell;
use bnrnn_core::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `a` is m×k, `b` is k×n, both row-major.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Batch normalization of an m×d matrix with biased batch variance.
pub fn batch_norm(x: &[f64], m: usize, d: usize, gamma: &[f64], beta: Option<&[f64]>, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; m * d];
    for j in 0..d {
        let mean = (0..m).map(|i| x[i * d + j]).sum::<f64>() / m as f64;
        let var = (0..m).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / m as f64;
        for i in 0..m {
            let z = (x[i * d + j] - mean) / (var + eps).sqrt();
            out[i * d + j] = gamma[j] * z + beta.map_or(0.0, |b| b[j]);
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn add_bias(a: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = bias.len();
    a.iter().enumerate().map(|(i, v)| v + bias[i % d]).collect()
}

/// `h' = tanh(h W_h + x W_x + b)`
pub fn rnn_step(h: &[f64], x: &[f64], m: usize, w_h: &Tensor, w_x: &Tensor, b: &Tensor) -> Vec<f64> {
    let (dx, dh) = (w_x.shape()[0], w_h.shape()[1]);
    let pre = add_bias(&add(&matmul(h, m, dh, w_h.data(), dh), &matmul(x, m, dx, w_x.data(), dh)), b.data());
    pre.iter().map(|v| v.tanh()).collect()
}

/// Gate nonlinearities and cell update from stacked `[f, i, o, g]`
/// pre-activations; `read` maps `c'` to the value fed through tanh.
pub fn lstm_tail(pre: &[f64], c: &[f64], m: usize, dh: usize, read: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut c_next = vec![0.0; m * dh];
    let mut o_gate = vec![0.0; m * dh];
    for i in 0..m {
        for j in 0..dh {
            let row = &pre[i * 4 * dh..(i + 1) * 4 * dh];
            let f = sigmoid(row[j]);
            let ig = sigmoid(row[dh + j]);
            let o = sigmoid(row[2 * dh + j]);
            let g = row[3 * dh + j].tanh();
            c_next[i * dh + j] = f * c[i * dh + j] + ig * g;
            o_gate[i * dh + j] = o;
        }
    }
    let r = read(&c_next);
    let h_next = o_gate.iter().zip(&r).map(|(o, v)| o * v.tanh()).collect();
    (h_next, c_next)
}

pub struct LstmRef<'a> {
    pub w_h: &'a Tensor,
    pub w_x: &'a Tensor,
    pub b: &'a Tensor,
}

pub fn lstm_step(p: &LstmRef, h: &[f64], c: &[f64], x: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let (dx, dh) = (p.w_x.shape()[0], p.w_h.shape()[0]);
    let pre = add_bias(
        &add(&matmul(h, m, dh, p.w_h.data(), 4 * dh), &matmul(x, m, dx, p.w_x.data(), 4 * dh)),
        p.b.data(),
    );
    lstm_tail(&pre, c, m, dh, |c| c.to_vec())
}

pub struct BnGains<'a> {
    pub gamma_h: &'a [f64],
    pub gamma_x: &'a [f64],
    pub gamma_c: &'a [f64],
    pub beta_c: &'a [f64],
    pub eps: f64,
}

pub fn bn_lstm_step(p: &LstmRef, g: &BnGains, h: &[f64], c: &[f64], x: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let (dx, dh) = (p.w_x.shape()[0], p.w_h.shape()[0]);
    let rec = batch_norm(&matmul(h, m, dh, p.w_h.data(), 4 * dh), m, 4 * dh, g.gamma_h, None, g.eps);
    let inp = batch_norm(&matmul(x, m, dx, p.w_x.data(), 4 * dh), m, 4 * dh, g.gamma_x, None, g.eps);
    let pre = add_bias(&add(&rec, &inp), p.b.data());
    lstm_tail(&pre, c, m, dh, |c| batch_norm(c, m, dh, g.gamma_c, Some(g.beta_c), g.eps))
}

/// Replaces every trainable tensor of `cell` with uniform noise; gains
/// are drawn from `[0.2, 1.2]` so they stay positive.
pub fn randomize(cell: &mut Cell, rng: &mut ChaCha8Rng) {
    let names: Vec<&str> = cell.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.into_iter().zip(cell.params_mut()) {
        let shape = t.shape().to_vec();
        *t = random(&shape, rng);
        if name.starts_with("gamma") {
            *t = t.map(|v| 0.7 + 0.5 * v);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
pub mod checks;
