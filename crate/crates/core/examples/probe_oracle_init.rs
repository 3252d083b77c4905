//! Diagnostic: train with point positions initialized at the ground-truth
//! cloud and the lifecycle disabled, isolating appearance/deformation
//! learning from geometry transport. Dev tool.
use gsavatar_core::config::Config;
use gsavatar_core::synthdata::{build_scene, generate_dataset, load_dataset};
use gsavatar_core::trainer::metrics::evaluate;
use gsavatar_core::trainer::{train, TrainLogs, TrainerState, POINTS_TENSOR};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(40);
    let lr: f64 = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let mut cfg = Config::default();
    cfg.dataset_n_frames = 16;
    cfg.dataset_eval_every = 8;
    cfg.dataset_resolution = 64;
    cfg.dataset_n_points = 1200;
    cfg.rig_template_vertices = 300;
    let scene = build_scene(&cfg).unwrap();
    let dir = std::env::temp_dir().join("gsav_oracle_init");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(&scene, &cfg, &dir).unwrap();
    let dataset = load_dataset(&dir).unwrap();

    let mut tcfg = Config::desk_preset();
    tcfg.train_epochs = epochs;
    tcfg.train_lr = lr;
    tcfg.lifecycle_enabled = false;
    let mut state = TrainerState::new(tcfg, 3, cfg.rig_n_expressions);
    // Plant the optimizer positions exactly at the ground-truth cloud.
    state.store.insert(POINTS_TENSOR, scene.gt.cloud.means.clone());

    let mut logs = TrainLogs::default();
    let t0 = std::time::Instant::now();
    train(&mut state, &dataset, &mut logs, |state, stats| {
        if state.epoch % 5 == 0 || state.epoch == epochs {
            println!(
                "epoch {:>3}: loss {:.5} rgb {:.5} [{:.0}s]",
                state.epoch - 1,
                stats.mean_loss,
                stats.mean_parts.rgb,
                t0.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })
    .unwrap();
    let eval = evaluate(&state, &dataset, &dataset.eval_frames(), None).unwrap();
    println!("held-out psnr {:.2} ssim {:.4} l1 {:.5}", eval.mean.psnr, eval.mean.ssim, eval.mean.l1);
    let trainr = evaluate(&state, &dataset, &dataset.train_frames()[..4], None).unwrap();
    println!("train psnr {:.2} ssim {:.4}", trainr.mean.psnr, trainr.mean.ssim);
}
