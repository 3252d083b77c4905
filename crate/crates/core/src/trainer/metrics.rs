//! Evaluation metrics: per-frame L1 / PSNR / SSIM over rendered frames.

use super::{pipeline, TrainError, TrainerState, POINTS_TENSOR};
use crate::image::Image;
use crate::rig::PoseExpression;
use crate::ssim::ssim;
use crate::synthdata::Dataset;

/// PSNR of unit-range images, capped at 99 dB for exact matches.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        99.0
    } else {
        (-10.0 * mse.log10()).min(99.0)
    }
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    let n = a.data.len() as f64;
    a.data.iter().zip(b.data.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameMetrics {
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub per_frame: Vec<(usize, FrameMetrics)>,
    pub mean: FrameMetrics,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("frame,l1,psnr,ssim\n");
        for (frame, m) in &self.per_frame {
            out.push_str(&format!("{frame},{},{},{}\n", m.l1, m.psnr, m.ssim));
        }
        out.push_str(&format!("mean,{},{},{}\n", self.mean.l1, self.mean.psnr, self.mean.ssim));
        out
    }
}

pub fn metrics_for(render: &Image, gt: &Image) -> Result<FrameMetrics, TrainError> {
    let l1 =
        render.data.iter().zip(gt.data.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / render.data.len() as f64;
    let s = ssim(render, gt).map_err(crate::losses::LossError::from)?;
    Ok(FrameMetrics { l1, psnr: psnr(mse(render, gt)), ssim: s })
}

/// Renders a frame with the trained model (fast path) at the state's current
/// rendering radius, optionally overriding the stored latents.
pub fn render_frame(
    state: &TrainerState,
    dataset: &Dataset,
    frame: usize,
    pose_override: Option<&PoseExpression>,
) -> Result<Image, TrainError> {
    let rec = &dataset.frames[frame];
    let pose = pose_override.unwrap_or(&rec.pose);
    let fwd = pipeline::forward(
        &state.store,
        &state.bundle,
        &dataset.rig,
        state.store.value(POINTS_TENSOR),
        pose,
        &rec.camera,
        state.rendering_radius(),
        dataset.background,
        state.config.train_ablate_param_deform,
    )?;
    Ok(fwd.image)
}

/// Mean metrics over the given frames, rendered against their stored images.
pub fn evaluate(
    state: &TrainerState,
    dataset: &Dataset,
    frames: &[usize],
    pose_overrides: Option<&[PoseExpression]>,
) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport::default();
    for (k, &frame) in frames.iter().enumerate() {
        let gt = dataset.load_image(frame)?;
        let pose = pose_overrides.map(|p| &p[k]);
        let render = render_frame(state, dataset, frame, pose)?;
        let m = metrics_for(&render, &gt)?;
        report.per_frame.push((frame, m));
        report.mean.l1 += m.l1;
        report.mean.psnr += m.psnr;
        report.mean.ssim += m.ssim;
    }
    let n = frames.len().max(1) as f64;
    report.mean.l1 /= n;
    report.mean.psnr /= n;
    report.mean.ssim /= n;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_analytic_values() {
        assert_eq!(psnr(0.0), 99.0);
        assert!((psnr(0.01) - 20.0).abs() < 1e-12);
        assert!((psnr(1e-3) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn identical_images_hit_caps() {
        let mut img = Image::new(16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 97) as f64 / 97.0;
        }
        let m = metrics_for(&img, &img).unwrap();
        assert_eq!(m.psnr, 99.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert_eq!(m.l1, 0.0);
    }
}
