//! Field-network benchmarks: batched MLP forward/backward over point batches,
//! the dominant per-frame cost besides rasterization.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsavatar_core::autodiff::mlp::{mlp_backward, mlp_forward};
use gsavatar_core::autodiff::ParameterStore;
use gsavatar_core::fields::{FieldBundle, FieldConfig};
use rand::{Rng, SeedableRng};

fn setup(width: usize, layers: usize) -> (ParameterStore, FieldBundle) {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
    let bundle = FieldBundle::new(FieldConfig {
        hidden_width: width,
        hidden_layers: layers,
        encoding_bands: 0,
        offset_cap: 0.5,
        n_joints: 3,
        n_expressions: 10,
    });
    let mut store = ParameterStore::new();
    bundle.init_params(&mut store, &mut rng);
    (store, bundle)
}

fn bench_predict_net(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_net_fwd_bwd");
    group.sample_size(10);
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
    for &(width, layers) in &[(64usize, 2usize), (128, 3)] {
        let (store, bundle) = setup(width, layers);
        for &n in &[4_000usize, 20_000] {
            let x: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let d_out: Vec<f64> = vec![1e-3; n * 11];
            group.bench_with_input(
                BenchmarkId::new(format!("{width}x{layers}"), n),
                &n,
                |b, _| {
                    b.iter(|| {
                        let (out, tape) =
                            mlp_forward(&store, "predict", &bundle.predict, &x, n).unwrap();
                        let mut s = store.clone();
                        let d_in = mlp_backward(&mut s, "predict", &tape, &d_out).unwrap();
                        (out[0], d_in[0])
                    })
                },
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_predict_net);
criterion_main!(benches);
