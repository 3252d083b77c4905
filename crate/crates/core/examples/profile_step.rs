//! Rough per-stage timing of one training step; dev tool, not a test.
use gsavatar_core::config::Config;
use gsavatar_core::losses::*;
use gsavatar_core::synthdata::*;
use gsavatar_core::trainer::{pipeline, TrainerState, POINTS_TENSOR};
use std::time::Instant;

fn main() {
    let mut cfg = Config::default();
    cfg.dataset_n_frames = 4;
    let scene = build_scene(&cfg).unwrap();
    let dir = std::env::temp_dir().join("gsav_profile");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(&scene, &cfg, &dir).unwrap();
    let dataset = load_dataset(&dir).unwrap();
    let gt = dataset.load_image(0).unwrap();

    let n_points: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(800);
    let epoch: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(3);
    let mut tcfg = Config::desk_preset();
    tcfg.train_epochs = 60;
    tcfg.model_hidden_width = std::env::args().nth(3).and_then(|v| v.parse().ok()).unwrap_or(32);
    tcfg.model_encoding_bands = std::env::args().nth(4).and_then(|v| v.parse().ok()).unwrap_or(2);
    let mut state = TrainerState::new(tcfg, 3, 10);
    state.epoch = epoch;
    // Fake a grown point set.
    let base = state.store.value(POINTS_TENSOR).to_vec();
    let mut pts = Vec::new();
    while pts.len() < n_points * 3 {
        pts.extend_from_slice(&base);
    }
    pts.truncate(n_points * 3);
    state.store.insert(POINTS_TENSOR, pts);

    let rec = &dataset.frames[0];
    let x_c = state.store.value(POINTS_TENSOR).to_vec();
    for round in 0..3 {
        let t0 = Instant::now();
        let fwd = pipeline::forward(
            &state.store,
            &state.bundle,
            &dataset.rig,
            &x_c,
            &rec.pose,
            &rec.camera,
            state.rendering_radius(),
            dataset.background,
            false,
        )
        .unwrap();
        let t_fwd = t0.elapsed();

        let t1 = Instant::now();
        let (_, d_rgb) = rgb_loss_with_grad(&fwd.image, &gt, true).unwrap();
        let (_, d_dssim) = dssim_loss_with_grad(&fwd.image, &gt, true).unwrap();
        let ext = state.make_extractor();
        let (_, d_vgg) =
            perceptual_loss_with_grad(&fwd.image, &gt, ext.as_ref().map(|e| e as _), true);
        let t_loss = t1.elapsed();

        let t2 = Instant::now();
        let pseudo = pseudo_ground_truth(&dataset.template, &fwd.deform.x_o);
        let (_, fg) = flame_reg_loss_with_grad(
            &fwd.deform.template_out_e,
            &fwd.deform.template_out_p,
            &fwd.deform.template_out_w,
            &pseudo,
            &LossWeights::default(),
            true,
        );
        let t_flame = t2.elapsed();

        let mut d_image = d_rgb.unwrap();
        let dd = d_dssim.unwrap();
        for i in 0..d_image.len() {
            d_image[i] += 0.25 * dd[i];
        }
        if let Some(dv) = d_vgg {
            for i in 0..d_image.len() {
                d_image[i] += 0.1 * dv[i];
            }
        }
        let fg = fg.unwrap();
        let extra = pipeline::ExtraAdjoints {
            e_bases: Some(fg.e_bases),
            p_bases: Some(fg.p_bases),
            skin_weights: Some(fg.skin_weights),
        };
        let t3 = Instant::now();
        let _res = pipeline::backward(
            &mut state.store,
            &state.bundle,
            &dataset.rig,
            &rec.pose,
            &fwd,
            &d_image,
            &extra,
        )
        .unwrap();
        let t_bwd = t3.elapsed();
        state.store.zero_grads();
        if round == 2 {
            println!(
                "n={n_points} epoch={epoch}: fwd {t_fwd:?} loss {t_loss:?} flame+nn {t_flame:?} bwd {t_bwd:?}"
            );
        }
    }
}
