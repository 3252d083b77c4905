//! Evaluates a checkpoint against a dataset and reports held-out metrics plus
//! the skinning-weight error at template vertices; dev tool.
use gsavatar_core::fields::query_template;
use gsavatar_core::synthdata::load_dataset;
use gsavatar_core::trainer::checkpoint::load_checkpoint;
use gsavatar_core::trainer::finetune::finetune_frames;
use gsavatar_core::trainer::metrics::evaluate;
use std::path::PathBuf;

fn main() {
    let ckpt: PathBuf = std::env::args().nth(1).expect("checkpoint path").into();
    let data: PathBuf = std::env::args().nth(2).expect("dataset path").into();
    let finetune_steps: usize =
        std::env::args().nth(3).and_then(|v| v.parse().ok()).unwrap_or(0);
    let (state, rig) = load_checkpoint(&ckpt).unwrap();
    let dataset = load_dataset(&data).unwrap();
    assert_eq!(rig, dataset.rig);
    let eval_frames = dataset.eval_frames();
    let report = evaluate(&state, &dataset, &eval_frames, None).unwrap();
    println!(
        "held-out: l1 {:.5} psnr {:.2} ssim {:.4}  (epoch {}, {} points)",
        report.mean.l1,
        report.mean.psnr,
        report.mean.ssim,
        state.epoch,
        state.n_points()
    );
    let train_frames = dataset.train_frames();
    let train_report = evaluate(&state, &dataset, &train_frames[..4], None).unwrap();
    println!(
        "train[0..4]: l1 {:.5} psnr {:.2} ssim {:.4}",
        train_report.mean.l1, train_report.mean.psnr, train_report.mean.ssim
    );

    // Skinning weights at template vertices vs rig ground truth.
    let bank = &dataset.template;
    let (out, _) =
        query_template(&state.store, &state.bundle, &bank.positions, bank.n_vertices).unwrap();
    let mut mae = 0.0;
    for i in 0..bank.n_vertices * bank.n_joints {
        mae += (out.skin_weights[i] - bank.skin_weights[i]).abs();
    }
    mae /= (bank.n_vertices * bank.n_joints) as f64;
    println!("skinning-weight MAE at template vertices: {mae:.4}");

    if finetune_steps > 0 {
        let refined = finetune_frames(&state, &dataset, &eval_frames, finetune_steps).unwrap();
        let poses: Vec<_> = refined.into_iter().map(|o| o.pose).collect();
        let tuned = evaluate(&state, &dataset, &eval_frames, Some(&poses)).unwrap();
        println!(
            "held-out after {finetune_steps} latent steps: psnr {:.2} ssim {:.4}",
            tuned.mean.psnr, tuned.mean.ssim
        );
    }
}
