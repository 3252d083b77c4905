//! Renderer benchmarks: fast tiled path against the exhaustive oracle, and
//! the fast path across worker-pool sizes.
//!
//! Run `cargo bench -p gsavatar-core` for the parallel build and
//! `cargo bench -p gsavatar-core --no-default-features` for the fully
//! sequential fallback; comparing the two gives the true speedup of the
//! data-parallel core.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsavatar_core::camera::Camera;
use gsavatar_core::cloud::{GaussianCloud, SpaceTag};
use gsavatar_core::splat::oracle::render_oracle;
use gsavatar_core::splat::raster::{render_backward, render_fast};
use rand::{Rng, SeedableRng};

fn scene(n: usize, seed: u64) -> (GaussianCloud, Camera) {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Deformed);
    for _ in 0..n {
        cloud.push(
            [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(1.5..3.5),
            ],
            std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            std::array::from_fn(|_| rng.random_range(-5.0..-3.5)),
            rng.random_range(-1.0..2.5),
            std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
        );
    }
    let cam = Camera::new(
        280.0,
        280.0,
        128.0,
        128.0,
        256,
        256,
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        [0.0, 0.0, 0.0],
        0.01,
        100.0,
    )
    .unwrap();
    (cloud, cam)
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_forward_256px");
    group.sample_size(10);
    for &n in &[1_000usize, 10_000] {
        let (cloud, cam) = scene(n, 7);
        group.bench_with_input(BenchmarkId::new("fast", n), &n, |b, _| {
            b.iter(|| render_fast(&cloud, &cam, 0.01, [0.0; 3]).0)
        });
        if n <= 1_000 {
            group.bench_with_input(BenchmarkId::new("oracle", n), &n, |b, _| {
                b.iter(|| render_oracle(&cloud, &cam, 0.01, [0.0; 3]))
            });
        }
    }
    group.finish();
}

fn bench_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_backward_256px");
    group.sample_size(10);
    for &n in &[1_000usize, 10_000] {
        let (cloud, cam) = scene(n, 11);
        let (_, tape) = render_fast(&cloud, &cam, 0.01, [0.0; 3]);
        let d_image = vec![0.5; 256 * 256 * 3];
        group.bench_with_input(BenchmarkId::new("fast", n), &n, |b, _| {
            b.iter(|| render_backward(&tape, &d_image))
        });
    }
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench_thread_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_threads_10k");
    group.sample_size(10);
    let (cloud, cam) = scene(10_000, 13);
    for &threads in &[1usize, 2, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, _| {
            b.iter(|| pool.install(|| render_fast(&cloud, &cam, 0.01, [0.0; 3]).0))
        });
    }
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn bench_thread_scaling(_c: &mut Criterion) {}

criterion_group!(benches, bench_forward, bench_backward, bench_thread_scaling);
criterion_main!(benches);
