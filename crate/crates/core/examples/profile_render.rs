//! Renderer stage timing; dev tool.
use gsavatar_core::camera::Camera;
use gsavatar_core::cloud::{GaussianCloud, SpaceTag};
use gsavatar_core::splat::raster::{render_backward, render_fast};
use gsavatar_core::splat::project_cloud;
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(10000);
    let radius: f64 = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(0.119);
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
    let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Deformed);
    for _ in 0..n {
        // Positions on a sphere of radius 0.5, like early training.
        let d = [
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-3);
        cloud.push(
            [0.5 * d[0] / norm, 0.5 * d[1] / norm, 0.5 * d[2] / norm],
            [1.0 + rng.random_range(-0.1..0.1), 0.0, 0.0, 0.0],
            [-4.0 + rng.random_range(-0.2..0.2); 3],
            rng.random_range(-0.2..0.2),
            [0.0; 3],
        );
    }
    let f = 1.6 * 128.0;
    let cam = Camera::look_at(
        f, f, 128, 128, [0.0, 0.0, -2.2], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.05, 10.0,
    )
    .unwrap();
    for _ in 0..2 {
        let t0 = Instant::now();
        let scene = project_cloud(&cloud, &cam, radius, [1.0; 3]);
        let t_proj = t0.elapsed();
        let t1 = Instant::now();
        let (img, tape) = render_fast(&cloud, &cam, radius, [1.0; 3]);
        let t_fwd = t1.elapsed();
        let d_img = vec![0.5; 128 * 128 * 3];
        let t2 = Instant::now();
        let _g = render_backward(&tape, &d_img);
        let t_bwd = t2.elapsed();
        let contribs: u64 = tape.n_used.iter().map(|&v| v as u64).sum();
        let list_len: usize = tape.tile_lists.iter().map(|l| l.len()).sum();
        println!(
            "n={n} r={radius}: proj {t_proj:?} fwd {t_fwd:?} bwd {t_bwd:?} (walk prefix {contribs}, tile entries {list_len}, mean px {:.3})",
            img.data.iter().sum::<f64>() / img.data.len() as f64,
        );
        let _ = scene;
    }
}
