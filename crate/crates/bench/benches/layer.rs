use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use moore_bench::trained_like_layer;
use moore_core::linalg::svd;
use moore_core::moore::MooreConfig;
use moore_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZES: [usize; 3] = [16, 64, 128];

fn input(d: usize) -> Vec<f64> {
    (0..d).map(|i| ((i * 37) % 11) as f64 / 5.5 - 1.0).collect()
}

/// Unmerged forward against the merged inference form.
fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    for d in SIZES {
        let cfg = MooreConfig { d_t: 8, d_s: 4, l: 8, k: 3 };
        let layer = trained_like_layer(d, d, cfg, 1);
        let merged = layer.merge();
        let x = input(d);
        g.bench_with_input(BenchmarkId::new("unmerged", d), &x, |b, x| {
            b.iter(|| layer.forward(black_box(x), 1, None).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("merged", d), &x, |b, x| {
            b.iter(|| merged.forward(black_box(x), 1, None).unwrap())
        });
    }
    g.finish();
}

fn factorize(c: &mut Criterion) {
    let mut g = c.benchmark_group("svd");
    g.sample_size(10);
    for d in SIZES {
        let w = Matrix::random_uniform(d, d, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(d as u64));
        g.bench_with_input(BenchmarkId::from_parameter(d), &w, |b, w| b.iter(|| svd(black_box(w)).unwrap()));
    }
    g.finish();
}

fn householder(c: &mut Criterion) {
    let mut g = c.benchmark_group("householder_apply");
    for l in [2, 8, 32] {
        let cfg = MooreConfig { d_t: 4, d_s: 4, l, k: 1 };
        let layer = trained_like_layer(64, 64, cfg, 2);
        let x = input(64);
        g.bench_with_input(BenchmarkId::from_parameter(l), &x, |b, x| {
            b.iter(|| layer.chain().apply(black_box(x), None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward, factorize, householder);
criterion_main!(benches);
