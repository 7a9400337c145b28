use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use robograph::graph::renormalized_adjacency;
use robograph::refine::topk_neighbors;
use robograph_bench::{bundle, uniform};

const SIZES: [usize; 3] = [300, 1000, 3000];

fn spmm(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm");
    for n in SIZES {
        let a = renormalized_adjacency(&bundle(n).graph);
        let x = uniform(n, 64, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| a.spmm(black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in SIZES {
        let x = uniform(n, 100, 2);
        let w = uniform(100, 64, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(&x).matmul(black_box(&w)).unwrap())
        });
    }
    group.finish();
}

fn topk(c: &mut Criterion) {
    let mut group = c.benchmark_group("topk");
    group.sample_size(10);
    for n in SIZES {
        let h = uniform(n, 64, 4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| topk_neighbors(black_box(&h), 5))
        });
    }
    group.finish();
}

criterion_group!(benches, spmm, matmul, topk);
criterion_main!(benches);
