//! Criterion benchmarks for the hot paths: the 3x3 convolution kernel,
//! a full multi-scale encode, and one taped gradient computation.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::hint::black_box;

use bplf_core::conv::conv2d;
use bplf_core::{ArchitectureConfig, ConvKind, CouplingKind, FlowModel, Tape, Tensor};

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let input = random_tensor(&[16, 16, 16], &mut rng);
    let kernel = random_tensor(&[16, 16, 3, 3], &mut rng);
    let bias = random_tensor(&[16], &mut rng);
    c.bench_function("conv2d_16ch_16x16_k3", |b| {
        b.iter(|| conv2d(black_box(&input), black_box(&kernel), black_box(&bias)).unwrap())
    });
}

fn model() -> FlowModel<f32> {
    let cfg = ArchitectureConfig {
        levels: 2,
        depth: 4,
        coupling: CouplingKind::Bplf,
        conv: ConvKind::ThreeByThree,
        hidden: 32,
        num_classes: None,
        input: [1, 32, 32],
    };
    FlowModel::new(cfg, 7).unwrap()
}

fn bench_encode(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let m = model();
    let x = random_tensor(&[1, 32, 32], &mut rng);
    c.bench_function("encode_bplf_l2_k4_h32_32x32", |b| {
        b.iter(|| m.encode(black_box(&x), None).unwrap())
    });
}

fn bench_gradient(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let m = model();
    let x = random_tensor(&[1, 32, 32], &mut rng);
    c.bench_function("gradient_bplf_l2_k4_h32_32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new(m.store());
            let xv = tape.leaf(black_box(&x).clone());
            let ll = m.log_likelihood_taped(&mut tape, xv, None).unwrap();
            tape.backward(ll).unwrap()
        })
    });
}

criterion_group!(benches, bench_conv2d, bench_encode, bench_gradient);
criterion_main!(benches);
