use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use den_core::fdist_loss::{f_cdf_exact, f_cdf_laplace, pair_loss};
use den_core::pair_graph::build_knn;
use den_core::spectral_cluster::{affinity_matrix, laplacian_eigen};
use den_core::synth::make_blobs;
use den_core::SeedStream;

fn bench_fdist(c: &mut Criterion) {
    let mut group = c.benchmark_group("fdist");
    for n in [2usize, 8, 64] {
        group.bench_with_input(BenchmarkId::new("exact", n), &n, |b, &n| {
            b.iter(|| f_cdf_exact(black_box(1.7), black_box(n)))
        });
        group.bench_with_input(BenchmarkId::new("laplace", n), &n, |b, &n| {
            b.iter(|| f_cdf_laplace(black_box(1.7), black_box(n)))
        });
    }
    group.bench_function("pair_loss", |b| {
        b.iter(|| pair_loss(black_box(1.7), black_box(8), black_box(true)))
    });
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let data = make_blobs(5, 200, 20, 1.0, &SeedStream::new(7)).unwrap();
    c.bench_function("knn_1000x20_k10", |b| {
        b.iter(|| build_knn(black_box(&data), 10).unwrap())
    });
}

fn bench_spectral(c: &mut Criterion) {
    let data = make_blobs(3, 100, 5, 1.0, &SeedStream::new(9)).unwrap();
    c.bench_function("affinity_300", |b| {
        b.iter(|| affinity_matrix(black_box(&data.samples), 1.0, 1.0).unwrap())
    });
    let aff = affinity_matrix(&data.samples, 1.0, 1.0).unwrap();
    c.bench_function("laplacian_eigen_300", |b| {
        b.iter(|| laplacian_eigen(black_box(&aff)).unwrap())
    });
}

criterion_group!(benches, bench_fdist, bench_knn, bench_spectral);
criterion_main!(benches);
