//! Hot paths at the default desk-scale dimensions: fusion forward and
//! backward, the 3D convolution head input, and one full training step.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use opfusion_core::{
    op_bilinear_backward, op_bilinear_fuse, Model, ModelSpec, Tape, Tensor, Variant,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha20Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn bench_fusion(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let x = rand_tensor(&[8, 8, 8], &mut rng);
    let z = rand_tensor(&[16, 8], &mut rng);
    let fused = op_bilinear_fuse(&x, &z).unwrap();
    let upstream = rand_tensor(&fused.shape, &mut rng);
    c.bench_function("op_bilinear_fuse 8x8x8 x 16x8", |b| {
        b.iter(|| op_bilinear_fuse(black_box(&x), black_box(&z)).unwrap())
    });
    c.bench_function("op_bilinear_backward 8x8x8 x 16x8", |b| {
        b.iter(|| {
            op_bilinear_backward(black_box(&x), black_box(&z), black_box(&upstream)).unwrap()
        })
    });
}

fn bench_conv3d(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let input = rand_tensor(&[8, 8, 16, 64], &mut rng);
    let kernel = rand_tensor(&[3, 3, 3, 64, 6], &mut rng);
    c.bench_function("conv3d head 8x8x16x64 k3 f6", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.param(black_box(&input));
            let k = tape.param(black_box(&kernel));
            tape.conv3d(x, k, 1, opfusion_core::Padding::Valid).unwrap()
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let model = Model::build(ModelSpec::standard(Variant::OpBilinear)).unwrap();
    let visual = Tensor {
        shape: vec![32, 32, 1],
        data: (0..1024).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    let seismic = rand_tensor(&[256, 1], &mut rng);
    c.bench_function("op-bilinear loss_and_grads one sample", |b| {
        b.iter(|| {
            model
                .loss_and_grads(black_box(&visual), black_box(&seismic), 1)
                .unwrap()
        })
    });
}

criterion_group!(benches, bench_fusion, bench_conv3d, bench_train_step);
criterion_main!(benches);
