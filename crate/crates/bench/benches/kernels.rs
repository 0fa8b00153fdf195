use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qapseg::dilation::rank_schedules;
use qapseg::model::{AblationFlags, Model, ModelConfig};
use qapseg::tensor::{conv2d, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn uniform(shape: [usize; 4], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3_16ch_64px");
    let x = uniform([4, 16, 64, 64], 1);
    let k = uniform([16, 16, 3, 3], 2);
    for d in [1, 3, 9] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("d{d}")), &d, |b, &d| {
            b.iter(|| conv2d(&x, &k, None, 1, d, d).unwrap())
        });
    }
    group.finish();
}

fn bench_model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model_b8_64px");
    group.sample_size(10);
    let x = uniform([1, 1, 64, 64], 3);
    let target: Vec<usize> = (0..64 * 64).map(|i| i % 4).collect();
    for (label, flags) in [("none", AblationFlags::NONE), ("all", AblationFlags::ALL)] {
        let cfg = ModelConfig {
            base_channels: 8,
            flags,
            ..ModelConfig::default()
        };
        let m = Model::build(cfg, 0).unwrap();
        group.bench_function(BenchmarkId::new("forward", label), |b| {
            b.iter(|| m.forward(&x).unwrap())
        });
        group.bench_function(BenchmarkId::new("forward_backward", label), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let pv = m.register(&mut g, true);
                let xv = g.leaf(x.clone());
                let y = m.forward_graph(&mut g, &pv, xv).unwrap();
                let loss = g.focal_loss(y, &target, 2.0, &[1.0; 4]).unwrap();
                g.backward(loss).unwrap();
            })
        });
    }
    group.finish();
}

fn bench_rank(c: &mut Criterion) {
    c.bench_function("rank_schedules_f3_n3_r9", |b| {
        b.iter(|| rank_schedules(3, 3, 9).unwrap())
    });
}

criterion_group!(benches, bench_conv, bench_model, bench_rank);
criterion_main!(benches);
