//! Region-level render diagnostics against ground truth; dev tool.
use gsavatar_core::synthdata::load_dataset;
use gsavatar_core::trainer::checkpoint::load_checkpoint;
use gsavatar_core::trainer::metrics::render_frame;
use std::path::PathBuf;

fn main() {
    let ckpt: PathBuf = std::env::args().nth(1).unwrap().into();
    let data: PathBuf = std::env::args().nth(2).unwrap().into();
    let frame: usize = std::env::args().nth(3).and_then(|v| v.parse().ok()).unwrap_or(0);
    let (state, _) = load_checkpoint(&ckpt).unwrap();
    let dataset = load_dataset(&data).unwrap();
    let gt = dataset.load_image(frame).unwrap();
    let render = render_frame(&state, &dataset, frame, None).unwrap();
    let bg = dataset.background;
    let mut stats = [[0.0f64; 4]; 2]; // [is_fg][sum_err, sum_gt, sum_render, count]
    for i in 0..gt.data.len() / 3 {
        let gt_px = [gt.data[3 * i], gt.data[3 * i + 1], gt.data[3 * i + 2]];
        let is_fg = (0..3).any(|k| (gt_px[k] - bg[k]).abs() > 10.0 / 255.0);
        let s = &mut stats[is_fg as usize];
        for k in 0..3 {
            s[0] += (render.data[3 * i + k] - gt.data[3 * i + k]).abs();
            s[1] += gt.data[3 * i + k];
            s[2] += render.data[3 * i + k];
        }
        s[3] += 3.0;
    }
    for (name, s) in [("background", stats[0]), ("foreground", stats[1])] {
        println!(
            "{name}: {:.0} px, mean|err| {:.4}, gt mean {:.4}, render mean {:.4}",
            s[3] / 3.0,
            s[0] / s[3],
            s[1] / s[3],
            s[2] / s[3]
        );
    }
    println!(
        "rendering radius {:.4}, points {}, epoch {}",
        state.rendering_radius(),
        state.n_points(),
        state.epoch
    );
    // Opacity / scale distribution of the current model at a rest pose.
    let (cloud, _) = gsavatar_core::deform::deform_cloud(
        state.store.value(gsavatar_core::trainer::POINTS_TENSOR),
        &state.store,
        &state.bundle,
        &dataset.frames[frame].pose,
        &dataset.rig,
        false,
    )
    .unwrap();
    let n = cloud.len();
    let mut op: Vec<f64> = (0..n).map(|i| gsavatar_core::autodiff::sigmoid(cloud.opacities[i])).collect();
    op.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sc: Vec<f64> = (0..n)
        .map(|i| gsavatar_core::splat::scale_activation(cloud.scale(i)[0], state.rendering_radius()))
        .collect();
    sc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut r: Vec<f64> = (0..n)
        .map(|i| {
            let m = cloud.mean(i);
            (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt()
        })
        .collect();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |v: &[f64], p: f64| v[((v.len() - 1) as f64 * p) as usize];
    println!(
        "opacity q10/q50/q90: {:.3}/{:.3}/{:.3}  scale q10/q50/q90: {:.4}/{:.4}/{:.4}  |x| q10/q50/q90: {:.3}/{:.3}/{:.3}",
        q(&op, 0.1), q(&op, 0.5), q(&op, 0.9),
        q(&sc, 0.1), q(&sc, 0.5), q(&sc, 0.9),
        q(&r, 0.1), q(&r, 0.5), q(&r, 0.9),
    );
}
