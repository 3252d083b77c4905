//! Per-frame latent refinement: pose/expression coefficients optimized by
//! Adam against the RGB loss only, with all field weights frozen. Returns the
//! best iterate, so the refined loss never exceeds the starting loss.

use super::{pipeline, TrainError, TrainerState, POINTS_TENSOR};
use crate::autodiff::{NonFinitePolicy, ParameterStore};
use crate::image::Image;
use crate::losses::rgb_loss_with_grad;
use crate::rig::PoseExpression;
use crate::synthdata::Dataset;

pub struct FinetuneOutcome {
    pub pose: PoseExpression,
    pub initial_rgb_loss: f64,
    pub final_rgb_loss: f64,
}

/// Refines one frame's latents for `steps` Adam iterations. Zero steps
/// returns the initial latents untouched.
pub fn finetune_frame(
    state: &TrainerState,
    dataset: &Dataset,
    frame: usize,
    gt: &Image,
    steps: usize,
) -> Result<FinetuneOutcome, TrainError> {
    let rec = &dataset.frames[frame];
    let mut latents = ParameterStore::new();
    latents.insert("theta", rec.pose.theta.clone());
    latents.insert("psi", rec.pose.psi.clone());
    // Weight gradients accumulate into a scratch store and are discarded.
    let mut scratch = state.store.clone();

    let x_c = state.store.value(POINTS_TENSOR).to_vec();
    let eval_pose = |latents: &ParameterStore| PoseExpression {
        theta: latents.value("theta").to_vec(),
        psi: latents.value("psi").to_vec(),
    };

    let mut best_pose = eval_pose(&latents);
    let mut best_loss = f64::INFINITY;
    let mut initial = None;
    for _ in 0..=steps {
        let pose = eval_pose(&latents);
        let fwd = pipeline::forward(
            &state.store,
            &state.bundle,
            &dataset.rig,
            &x_c,
            &pose,
            &rec.camera,
            state.rendering_radius(),
            dataset.background,
            state.config.train_ablate_param_deform,
        )?;
        let (rgb, d_rgb) = rgb_loss_with_grad(&fwd.image, gt, true)?;
        if initial.is_none() {
            initial = Some(rgb);
        }
        if rgb < best_loss {
            best_loss = rgb;
            best_pose = pose.clone();
        }
        if latents.get("theta")?.step as usize >= steps {
            break;
        }
        let result = pipeline::backward(
            &mut scratch,
            &state.bundle,
            &dataset.rig,
            &pose,
            &fwd,
            &d_rgb.unwrap(),
            &pipeline::ExtraAdjoints::default(),
        )?;
        scratch.zero_grads();
        for (g, v) in latents.grad_mut("theta").iter_mut().zip(result.theta.iter()) {
            *g += v;
        }
        for (g, v) in latents.grad_mut("psi").iter_mut().zip(result.psi.iter()) {
            *g += v;
        }
        latents.adam_step(
            state.config.train_lr,
            (state.config.train_beta1, state.config.train_beta2),
            state.config.train_eps,
            NonFinitePolicy::Abort,
        )?;
    }
    Ok(FinetuneOutcome {
        pose: best_pose,
        initial_rgb_loss: initial.unwrap_or(0.0),
        final_rgb_loss: best_loss,
    })
}

/// Refines every listed frame; returns per-frame best latents in order.
pub fn finetune_frames(
    state: &TrainerState,
    dataset: &Dataset,
    frames: &[usize],
    steps: usize,
) -> Result<Vec<FinetuneOutcome>, TrainError> {
    frames
        .iter()
        .map(|&f| {
            let gt = dataset.load_image(f)?;
            finetune_frame(state, dataset, f, &gt, steps)
        })
        .collect()
}
