//! Diagnostic: overfit a single frame with positions frozen at ground truth
//! and a fixed rendering radius; prints loss and region means. Dev tool.
use gsavatar_core::autodiff::NonFinitePolicy;
use gsavatar_core::config::Config;
use gsavatar_core::losses::*;
use gsavatar_core::synthdata::{build_scene, generate_dataset, load_dataset};
use gsavatar_core::trainer::{pipeline, TrainerState, POINTS_TENSOR};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(300);
    let lr: f64 = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let radius: f64 = std::env::args().nth(3).and_then(|v| v.parse().ok()).unwrap_or(0.02);
    let mut cfg = Config::default();
    cfg.dataset_n_frames = 4;
    cfg.dataset_eval_every = 100;
    cfg.dataset_resolution = 64;
    cfg.dataset_n_points = 1200;
    cfg.rig_template_vertices = 300;
    let scene = build_scene(&cfg).unwrap();
    let dir = std::env::temp_dir().join("gsav_overfit");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(&scene, &cfg, &dir).unwrap();
    let dataset = load_dataset(&dir).unwrap();
    let gt = dataset.load_image(0).unwrap();
    let rec = &dataset.frames[0];

    let mut tcfg = Config::desk_preset();
    tcfg.train_lr = lr;
    let mut state = TrainerState::new(tcfg, 3, cfg.rig_n_expressions);
    state.store.insert(POINTS_TENSOR, scene.gt.cloud.means.clone());
    let weights = state.config.loss_weights();

    for step in 0..=steps {
        let x_c = state.store.value(POINTS_TENSOR).to_vec();
        let fwd = pipeline::forward(
            &state.store,
            &state.bundle,
            &dataset.rig,
            &x_c,
            &rec.pose,
            &rec.camera,
            radius,
            dataset.background,
            false,
        )
        .unwrap();
        let (rgb, d_rgb) = rgb_loss_with_grad(&fwd.image, &gt, true).unwrap();
        let (dssim, d_dssim) = dssim_loss_with_grad(&fwd.image, &gt, true).unwrap();
        if step % 50 == 0 {
            // Region means.
            let bg = dataset.background;
            let mut fg_sum = 0.0f64;
            let mut fg_n = 0.0f64;
            let mut bg_sum = 0.0f64;
            let mut bg_n = 0.0f64;
            for i in 0..gt.data.len() / 3 {
                let is_fg = (0..3).any(|k| (gt.data[3 * i + k] - bg[k]).abs() > 10.0 / 255.0);
                for k in 0..3 {
                    if is_fg {
                        fg_sum += fwd.image.data[3 * i + k];
                        fg_n += 1.0;
                    } else {
                        bg_sum += fwd.image.data[3 * i + k];
                        bg_n += 1.0;
                    }
                }
            }
            println!(
                "step {step:>4}: rgb {rgb:.5} dssim {dssim:.5} | render fg {:.3} bg {:.3}",
                fg_sum / fg_n.max(1.0),
                bg_sum / bg_n.max(1.0)
            );
        }
        let mut d_image = d_rgb.unwrap();
        let dd = d_dssim.unwrap();
        for i in 0..d_image.len() {
            d_image[i] = weights.rgb * d_image[i] + weights.dssim * dd[i];
        }
        pipeline::backward(
            &mut state.store,
            &state.bundle,
            &dataset.rig,
            &rec.pose,
            &fwd,
            &d_image,
            &pipeline::ExtraAdjoints::default(),
        )
        .unwrap();
        // Freeze geometry.
        state.store.grad_mut(POINTS_TENSOR).iter_mut().for_each(|g| *g = 0.0);
        state
            .store
            .adam_step(lr, (0.9, 0.999), 1e-8, NonFinitePolicy::Abort)
            .unwrap();
    }
}
