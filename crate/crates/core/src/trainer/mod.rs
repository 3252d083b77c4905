//! Training orchestration: epoch scheduling, per-frame Adam steps, point
//! lifecycle at epoch boundaries, metric logging, checkpointing, evaluation
//! and per-frame latent fine-tuning.

pub mod checkpoint;
pub mod finetune;
pub mod metrics;
pub mod pipeline;

use crate::autodiff::{AutodiffError, NonFinitePolicy, ParameterStore};
use crate::cloud::{GaussianCloud, SpaceTag};
use crate::config::Config;
use crate::deform::DeformError;
use crate::fields::{FieldBundle, FieldConfig};
use crate::image::Image;
use crate::lifecycle::{self, LifecycleSchedule, LifecycleStrategy};
use crate::losses::{
    dssim_loss_with_grad, flame_reg_loss_with_grad, perceptual_loss_with_grad,
    pseudo_ground_truth, rgb_loss_with_grad, total_loss, LossError, LossParts,
};
use crate::perceptual::{FeatureExtractor, RandomConvExtractor};
use crate::splat::{ALPHA_CUTOFF, TILE};
use crate::synthdata::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::fmt::Write as _;
use thiserror::Error;

/// Name of the learnable point-position tensor in the parameter store.
pub const POINTS_TENSOR: &str = "points.xc";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Dataset(#[from] crate::synthdata::DatasetError),
    #[error("non-finite loss at epoch {epoch}, frame {frame}: {parts:?}")]
    NonFiniteLoss { epoch: usize, frame: usize, parts: LossParts },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Learning rate after the configured step decays.
pub fn lr_at_epoch(epoch: usize, cfg: &Config) -> f64 {
    let decays = cfg.train_lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.train_lr * cfg.train_lr_decay_factor.powi(decays as i32)
}

/// Multiplier on the template-regularization weight after its decays.
pub fn flame_weight_at_epoch(epoch: usize, cfg: &Config) -> f64 {
    let decays = cfg.train_flame_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.train_flame_decay_factor.powi(decays as i32)
}

fn stream_seed(master: u64, purpose: u64, epoch: usize) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(
        master ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64).wrapping_mul(0x1000_0000_1b3),
    )
}

const SEED_INIT: u64 = 1;
const SEED_SHUFFLE: u64 = 2;
const SEED_UPSAMPLE: u64 = 3;

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub config: Config,
    pub bundle: FieldBundle,
    pub store: ParameterStore,
    pub schedule: LifecycleSchedule,
    pub epoch: usize,
}

impl TrainerState {
    /// Fresh state: field nets initialized from the run seed, the initial
    /// point set sampled on a sphere of the starting sampling radius.
    pub fn new(config: Config, rig_joints: usize, rig_expressions: usize) -> Self {
        let field_cfg = FieldConfig {
            hidden_width: config.model_hidden_width,
            hidden_layers: config.model_hidden_layers,
            encoding_bands: config.model_encoding_bands,
            offset_cap: config.model_offset_cap,
            n_joints: rig_joints,
            n_expressions: rig_expressions,
        };
        let bundle = FieldBundle::new(field_cfg);
        let mut store = ParameterStore::new();
        let mut rng = stream_seed(config.train_seed, SEED_INIT, 0);
        bundle.init_params(&mut store, &mut rng);
        let schedule = config.lifecycle_schedule();
        let n0 = schedule.target_points(0);
        let mut points = Vec::with_capacity(n0 * 3);
        // Head-scale sphere; the rig lives inside radius ~0.35.
        let radius = 0.3;
        for _ in 0..n0 {
            // Uniform direction on the sphere via normalized Gaussians.
            loop {
                let v = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                let n2: f64 = v.iter().map(|x| x * x).sum();
                if n2 > 1e-4 && n2 <= 1.0 {
                    let s = radius / n2.sqrt();
                    points.extend_from_slice(&[v[0] * s, v[1] * s, v[2] * s]);
                    break;
                }
            }
        }
        store.insert(POINTS_TENSOR, points);
        Self { config, bundle, store, schedule, epoch: 0 }
    }

    pub fn n_points(&self) -> usize {
        self.store.value(POINTS_TENSOR).len() / 3
    }

    pub fn positions(&self) -> &[f64] {
        self.store.value(POINTS_TENSOR)
    }

    /// Rendering radius for the current epoch (frozen state at checkpoints).
    pub fn rendering_radius(&self) -> f64 {
        self.schedule.rendering_radius(self.epoch)
    }

    pub fn make_extractor(&self) -> Option<RandomConvExtractor> {
        if self.config.loss_vgg > 0.0 {
            Some(RandomConvExtractor::new(self.config.loss_perceptual_seed))
        } else {
            None
        }
    }
}

/// Per-frame step outcome.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub parts: LossParts,
    pub total: f64,
}

/// Accumulated per-epoch statistics for pruning and logs.
pub struct EpochStats {
    pub mean_loss: f64,
    pub mean_parts: LossParts,
    pub points_after: usize,
    pub pruned: usize,
    pub upsampled_to: usize,
}

struct OpacityAccum {
    sum: Vec<f64>,
    frames: usize,
    was_first: Vec<bool>,
}

/// One gradient step on one frame. Also folds deformed-opacity statistics
/// into `accum` for the end-of-epoch prune.
#[allow(clippy::too_many_arguments)]
fn train_step(
    state: &mut TrainerState,
    dataset: &Dataset,
    gt: &Image,
    frame: usize,
    flame_multiplier: f64,
    lr: f64,
    extractor: Option<&dyn FeatureExtractor>,
    accum: Option<&mut OpacityAccum>,
) -> Result<StepStats, TrainError> {
    let rec = &dataset.frames[frame];
    let learn_latents = false;
    let _ = learn_latents;
    let x_c = state.store.value(POINTS_TENSOR).to_vec();
    let fwd = pipeline::forward(
        &state.store,
        &state.bundle,
        &dataset.rig,
        &x_c,
        &rec.pose,
        &rec.camera,
        state.rendering_radius(),
        dataset.background,
        state.config.train_ablate_param_deform,
    )?;

    let weights = state.config.loss_weights();
    let (rgb, d_rgb) = rgb_loss_with_grad(&fwd.image, gt, true)?;
    let (dssim, d_dssim) = dssim_loss_with_grad(&fwd.image, gt, true)?;
    let (vgg, d_vgg) = match extractor {
        Some(ext) => perceptual_loss_with_grad(&fwd.image, gt, Some(ext), true),
        None => (0.0, None),
    };
    let pseudo = pseudo_ground_truth(&dataset.template, &fwd.deform.x_o);
    let (flame, flame_grads) = flame_reg_loss_with_grad(
        &fwd.deform.template_out_e,
        &fwd.deform.template_out_p,
        &fwd.deform.template_out_w,
        &pseudo,
        &weights,
        true,
    );
    let parts = LossParts { rgb, dssim, flame, vgg };
    let total = total_loss(&parts, &weights, flame_multiplier);
    if !total.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: state.epoch, frame, parts });
    }

    // Combined image adjoint.
    let d_rgb = d_rgb.unwrap();
    let d_dssim = d_dssim.unwrap();
    let mut d_image = vec![0.0; d_rgb.len()];
    for i in 0..d_image.len() {
        d_image[i] = weights.rgb * d_rgb[i] + weights.dssim * d_dssim[i];
    }
    if let Some(dv) = d_vgg {
        for i in 0..d_image.len() {
            d_image[i] += weights.vgg * dv[i];
        }
    }
    let extra = match flame_grads {
        Some(g) => {
            let scale = weights.flame * flame_multiplier;
            pipeline::ExtraAdjoints {
                e_bases: Some(g.e_bases.into_iter().map(|v| v * scale).collect()),
                p_bases: Some(g.p_bases.into_iter().map(|v| v * scale).collect()),
                skin_weights: Some(g.skin_weights.into_iter().map(|v| v * scale).collect()),
            }
        }
        None => pipeline::ExtraAdjoints::default(),
    };

    let result = pipeline::backward(
        &mut state.store,
        &state.bundle,
        &dataset.rig,
        &rec.pose,
        &fwd,
        &d_image,
        &extra,
    )?;
    {
        let g = state.store.grad_mut(POINTS_TENSOR);
        for (a, b) in g.iter_mut().zip(result.x_c.iter()) {
            *a += b;
        }
    }

    if let Some(acc) = accum {
        // Invisible points count as zero opacity for the epoch statistic, so
        // points that escape every view get pruned instead of surviving on
        // their raw logits.
        let scene = &fwd.render.scene;
        for (i, s) in acc.sum.iter_mut().enumerate() {
            if scene.in_view(i) {
                *s += scene.opacity[i];
            }
        }
        acc.frames += 1;
        if state.config.lifecycle_strategy == LifecycleStrategy::FirstSplat {
            mark_first_splats(&fwd.render, &mut acc.was_first);
        }
    }

    state.store.adam_step(
        lr,
        (state.config.train_beta1, state.config.train_beta2),
        state.config.train_eps,
        NonFinitePolicy::Abort,
    )?;
    Ok(StepStats { parts, total })
}

/// Flags every point that is the first contributing splat on some pixel.
fn mark_first_splats(tape: &crate::splat::raster::RenderTape, flags: &mut [bool]) {
    let scene = &tape.scene;
    let (w, h) = (scene.width, scene.height);
    for y in 0..h {
        for x in 0..w {
            let t = (y / TILE) * tape.tiles_x + x / TILE;
            let list = &tape.tile_lists[t];
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for pos in 0..tape.n_used[y * w + x] as usize {
                let i = list[pos] as usize;
                let dx = px - scene.mean2d[2 * i];
                let dy = py - scene.mean2d[2 * i + 1];
                let q = scene.conic[3 * i] * dx * dx
                    + 2.0 * scene.conic[3 * i + 1] * dx * dy
                    + scene.conic[3 * i + 2] * dy * dy;
                let alpha = (scene.opacity[i] * crate::autodiff::fastmath::fast_exp(-0.5 * q)).min(crate::splat::ALPHA_CLAMP);
                if alpha >= ALPHA_CUTOFF {
                    flags[i] = true;
                    break;
                }
            }
        }
    }
}

/// Runs one epoch: shuffled frame steps, then prune + upsample to the
/// scheduled target. Returns per-epoch statistics.
pub fn train_epoch(
    state: &mut TrainerState,
    dataset: &Dataset,
    images: &[Image],
    train_frames: &[usize],
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<EpochStats, TrainError> {
    let epoch = state.epoch;
    let lr = lr_at_epoch(epoch, &state.config);
    let flame_mult = flame_weight_at_epoch(epoch, &state.config);

    let mut order: Vec<usize> = train_frames.to_vec();
    let mut rng = stream_seed(state.config.train_seed, SEED_SHUFFLE, epoch);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut accum = OpacityAccum {
        sum: vec![0.0; state.n_points()],
        frames: 0,
        was_first: vec![false; state.n_points()],
    };
    let mut loss_sum = 0.0;
    let mut parts_sum = LossParts::default();
    for &frame in &order {
        let stats = train_step(
            state,
            dataset,
            &images[frame],
            frame,
            flame_mult,
            lr,
            extractor,
            Some(&mut accum),
        )?;
        loss_sum += stats.total;
        parts_sum.rgb += stats.parts.rgb;
        parts_sum.dssim += stats.parts.dssim;
        parts_sum.flame += stats.parts.flame;
        parts_sum.vgg += stats.parts.vgg;
    }
    let n_steps = order.len().max(1) as f64;
    let mean_parts = LossParts {
        rgb: parts_sum.rgb / n_steps,
        dssim: parts_sum.dssim / n_steps,
        flame: parts_sum.flame / n_steps,
        vgg: parts_sum.vgg / n_steps,
    };

    // Lifecycle at the epoch barrier.
    let mut pruned = 0;
    let mut upsampled_to = state.n_points();
    if state.config.lifecycle_enabled && accum.frames > 0 {
        let n_before = state.n_points();
        let positions = state.store.value(POINTS_TENSOR).to_vec();
        let cloud = positions_cloud(&positions);
        let outcome = match state.config.lifecycle_strategy {
            LifecycleStrategy::OpacityThreshold => {
                let mean: Vec<f64> =
                    accum.sum.iter().map(|s| s / accum.frames as f64).collect();
                lifecycle::prune(&cloud, &mean, state.schedule.prune_threshold)
            }
            LifecycleStrategy::FirstSplat => lifecycle::prune_first_splat(&cloud, &accum.was_first),
        };
        if outcome.kept_everything_guard {
            eprintln!("warning: epoch {epoch} prune removed everything; keeping best point");
        }
        pruned = n_before - outcome.kept.len();
        let target = match state.config.lifecycle_strategy {
            LifecycleStrategy::OpacityThreshold => state.schedule.target_points(epoch),
            // Alternative strategy: double every stage, constant radius.
            LifecycleStrategy::FirstSplat => {
                if (epoch + 1) % state.schedule.stage1 == 0 {
                    (outcome.kept.len() * 2).min(state.schedule.max_points)
                } else {
                    outcome.kept.len()
                }
            }
        };
        let sampling_radius = match state.config.lifecycle_strategy {
            LifecycleStrategy::OpacityThreshold => state.schedule.sampling_radius(epoch),
            LifecycleStrategy::FirstSplat => state.schedule.r0,
        };
        let mut up_rng = stream_seed(state.config.train_seed, SEED_UPSAMPLE, epoch);
        let upsampled = lifecycle::upsample(&outcome.cloud, target, sampling_radius, &mut up_rng);
        upsampled_to = upsampled.len();
        let fresh = upsampled.means[outcome.kept.len() * 3..].to_vec();
        let old = state.store.get(POINTS_TENSOR)?.gather_rows(&outcome.kept, 3, &fresh);
        state.store.insert_tensor(POINTS_TENSOR, old);
    }

    state.epoch += 1;
    Ok(EpochStats {
        mean_loss: loss_sum / n_steps,
        mean_parts,
        points_after: state.n_points(),
        pruned,
        upsampled_to,
    })
}

fn positions_cloud(positions: &[f64]) -> GaussianCloud {
    let n = positions.len() / 3;
    let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Initialized);
    for i in 0..n {
        cloud.push(
            [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]],
            [1.0, 0.0, 0.0, 0.0],
            [0.0; 3],
            0.0,
            [0.0; 3],
        );
    }
    cloud
}

/// CSV logs written during `train`: metrics per epoch and the lifecycle
/// schedule as executed.
pub struct TrainLogs {
    pub metrics_csv: String,
    pub schedule_csv: String,
}

impl Default for TrainLogs {
    fn default() -> Self {
        Self {
            metrics_csv: "epoch,mean_total,mean_rgb,mean_dssim,mean_flame,mean_vgg,points\n"
                .to_string(),
            schedule_csv:
                "epoch,target,sampling_radius,rendering_radius,pruned,points_after\n".to_string(),
        }
    }
}

/// Full training run; `on_epoch` observes progress (checkpointing, prints).
pub fn train<F>(
    state: &mut TrainerState,
    dataset: &Dataset,
    logs: &mut TrainLogs,
    mut on_epoch: F,
) -> Result<(), TrainError>
where
    F: FnMut(&TrainerState, &EpochStats) -> Result<(), TrainError>,
{
    let train_frames = dataset.train_frames();
    let images: Vec<Image> = {
        let mut v = Vec::with_capacity(dataset.frames.len());
        for i in 0..dataset.frames.len() {
            v.push(dataset.load_image(i)?);
        }
        v
    };
    let extractor = state.make_extractor();
    let ext_ref: Option<&dyn FeatureExtractor> = extractor.as_ref().map(|e| e as _);
    while state.epoch < state.config.train_epochs {
        let epoch = state.epoch;
        let (target, sr, rr) = state.schedule.at_epoch(epoch);
        let stats = train_epoch(state, dataset, &images, &train_frames, ext_ref)?;
        writeln!(
            logs.metrics_csv,
            "{epoch},{},{},{},{},{},{}",
            stats.mean_loss,
            stats.mean_parts.rgb,
            stats.mean_parts.dssim,
            stats.mean_parts.flame,
            stats.mean_parts.vgg,
            stats.points_after
        )
        .unwrap();
        writeln!(
            logs.schedule_csv,
            "{epoch},{target},{sr},{rr},{},{}",
            stats.pruned, stats.points_after
        )
        .unwrap();
        on_epoch(state, &stats)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_config() -> Config {
        Config::default()
    }

    #[test]
    fn lr_schedule_matches_published_values() {
        let cfg = decay_config();
        assert_eq!(lr_at_epoch(0, &cfg), 1e-4);
        assert_eq!(lr_at_epoch(79, &cfg), 1e-4);
        assert_eq!(lr_at_epoch(80, &cfg), 5e-5);
        assert_eq!(lr_at_epoch(99, &cfg), 5e-5);
        assert_eq!(lr_at_epoch(100, &cfg), 2.5e-5);
        assert_eq!(lr_at_epoch(150, &cfg), 2.5e-5);
    }

    #[test]
    fn flame_decay_matches_published_values() {
        let cfg = decay_config();
        assert_eq!(flame_weight_at_epoch(10, &cfg), 1.0);
        assert_eq!(flame_weight_at_epoch(35, &cfg), 0.25);
        assert_eq!(flame_weight_at_epoch(200, &cfg), 0.0625);
        assert_eq!(flame_weight_at_epoch(20, &cfg), 0.5);
    }

    #[test]
    fn fresh_state_has_scheduled_point_count_on_sphere() {
        let mut cfg = Config::desk_preset();
        cfg.model_hidden_width = 8;
        cfg.model_hidden_layers = 1;
        let state = TrainerState::new(cfg, 3, 10);
        assert_eq!(state.n_points(), 400);
        for i in 0..state.n_points() {
            let p = &state.positions()[3 * i..3 * i + 3];
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 0.3).abs() < 1e-12, "init points live on the head-scale sphere");
        }
    }
}
