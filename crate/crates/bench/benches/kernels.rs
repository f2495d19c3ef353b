use std::hint::black_box;

use bnrnn_core::batchnorm::{bn_forward_train, BnParams};
use bnrnn_core::{Tape, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::randn(&[16, 64], 1.0, &mut rng);
    let b = Tensor::randn(&[64, 256], 1.0, &mut rng);
    c.bench_function("matmul 16x64 by 64x256", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
}

fn batch_norm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[16, 256], 1.0, &mut rng);
    let params = BnParams::new(256, 0.1, Some(0.0), 1e-5).unwrap();
    c.bench_function("batch norm forward and backward 16x256", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let (y, _) = bn_forward_train(&mut tape, xv, &bound).unwrap();
            let loss = tape.sum(y).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

criterion_group!(benches, matmul, batch_norm);
criterion_main!(benches);
