//! MLP microbenchmark; dev tool.
use gsavatar_core::autodiff::mlp::{mlp_backward, mlp_forward};
use gsavatar_core::autodiff::ParameterStore;
use gsavatar_core::fields::{FieldBundle, FieldConfig};
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(20000);
    let width: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(64);
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
    let bundle = FieldBundle::new(FieldConfig {
        hidden_width: width,
        hidden_layers: 2,
        encoding_bands: 0,
        offset_cap: 0.5,
        n_joints: 3,
        n_expressions: 10,
    });
    let mut store = ParameterStore::new();
    bundle.init_params(&mut store, &mut rng);
    let x: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let d: Vec<f64> = vec![1e-3; n * 11];
    // MACs: layer sums.
    let macs: usize = n * (3 * width + width * width + width * 11);
    for _ in 0..2 {
        let t0 = Instant::now();
        let (_, tape) = mlp_forward(&store, "predict", &bundle.predict, &x, n).unwrap();
        let t_f = t0.elapsed();
        let t1 = Instant::now();
        let _ = mlp_backward(&mut store, "predict", &tape, &d).unwrap();
        let t_b = t1.elapsed();
        store.zero_grads();
        println!(
            "n={n} w={width}: fwd {t_f:?} ({:.2} GMAC/s) bwd {t_b:?}",
            macs as f64 / t_f.as_secs_f64() / 1e9
        );
    }
}
