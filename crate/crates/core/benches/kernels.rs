use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srcn::nn::uniform;
use srcn::tensor::kernels::{self, ConvGeom, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = ConvGeom {
        batch: 16,
        c_in: 8,
        height: 48,
        width: 48,
        c_out: 16,
        kernel: 3,
        pad: 1,
    };
    let input = uniform(&[g.batch * g.c_in * g.height * g.width], 1.0, &mut rng).into_data();
    let kern = uniform(&[g.c_out * g.c_in * 9], 0.3, &mut rng).into_data();
    let bias = vec![0.1; g.c_out];
    let grad_out = uniform(&[g.batch * g.c_out * g.height * g.width], 1.0, &mut rng).into_data();

    let mut group = c.benchmark_group("conv2d");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("forward", name), &exec, |b, &exec| {
            b.iter(|| kernels::conv2d_forward(exec, &g, black_box(&input), &kern, &bias))
        });
        group.bench_with_input(BenchmarkId::new("backward_input", name), &exec, |b, &exec| {
            b.iter(|| kernels::conv2d_backward_input(exec, &g, &kern, black_box(&grad_out)))
        });
        group.bench_with_input(BenchmarkId::new("backward_params", name), &exec, |b, &exec| {
            b.iter(|| kernels::conv2d_backward_params(exec, &g, black_box(&input), &grad_out))
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, q, r) = (256, 256, 256);
    let a = uniform(&[p * q], 1.0, &mut rng).into_data();
    let b = uniform(&[q * r], 1.0, &mut rng).into_data();
    let mut group = c.benchmark_group("matmul_256");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |bench, &exec| {
            bench.iter(|| kernels::matmul(exec, black_box(&a), &b, p, q, r))
        });
    }
    group.finish();
}

criterion_group!(benches, conv2d, matmul);
criterion_main!(benches);
