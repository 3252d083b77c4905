//! Coarse-to-fine point insertion and deletion.
//!
//! The default schedule: targets step through
//! 400, 800, 1600, 3200, 6400, 10000, 20000, 40000 every 5 epochs, then
//! 80000 and 100000 every 10 epochs, then stay at the maximum; sampling and
//! rendering radii decay together by 0.75 per stage, freeze after epoch 100
//! and never drop below 0.004. All stage lengths scale by one factor so desk
//! presets can compress the whole schedule; targets additionally cap at
//! `max_points`.

use crate::cloud::GaussianCloud;
use rand::Rng;

/// The published target ladder for the first forty epochs.
pub const TARGET_LADDER: [usize; 8] = [400, 800, 1600, 3200, 6400, 10000, 20000, 40000];
pub const PHASE2_TARGETS: [usize; 2] = [80_000, 100_000];
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleStrategy {
    /// Prune on epoch-mean activated opacity below the threshold, upsample to
    /// the scheduled target with a decaying sampling radius.
    OpacityThreshold,
    /// Ablation alternative: prune points that were never the first splat on
    /// any pixel, double the count every five epochs, constant radius.
    FirstSplat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleSchedule {
    pub r0: f64,
    pub decay: f64,
    pub radius_floor: f64,
    pub max_points: usize,
    /// Stage length in phase one (ladder steps); 5 in the full schedule.
    pub stage1: usize,
    /// Stage length in phase two (80k/100k steps); 10 in the full schedule.
    pub stage2: usize,
    /// Radius-decay period after phase two; 5 in the full schedule.
    pub stage3: usize,
    /// Epoch after which radii stop decaying; 100 in the full schedule.
    pub freeze_epoch: usize,
    pub prune_threshold: f64,
    pub strategy: LifecycleStrategy,
}

impl LifecycleSchedule {
    pub fn paper_default(max_points: usize) -> Self {
        Self {
            r0: 0.5,
            decay: 0.75,
            radius_floor: 0.004,
            max_points,
            stage1: 5,
            stage2: 10,
            stage3: 5,
            freeze_epoch: 100,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            strategy: LifecycleStrategy::OpacityThreshold,
        }
    }

    /// Compresses every stage length by `factor`, keeping decay constants.
    pub fn scaled(factor: f64, max_points: usize) -> Self {
        let scale = |x: usize| ((x as f64 * factor).round() as usize).max(1);
        Self {
            stage1: scale(5),
            stage2: scale(10),
            stage3: scale(5),
            freeze_epoch: scale(100),
            ..Self::paper_default(max_points)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(format!("decay factor must lie in (0,1), got {}", self.decay));
        }
        if self.r0 <= 0.0 || self.radius_floor < 0.0 {
            return Err("radii must be positive".into());
        }
        if self.stage1 == 0 || self.stage2 == 0 || self.stage3 == 0 {
            return Err("stage lengths must be nonzero".into());
        }
        Ok(())
    }

    pub fn target_points(&self, epoch: usize) -> usize {
        let p1 = TARGET_LADDER.len() * self.stage1;
        let p2 = p1 + PHASE2_TARGETS.len() * self.stage2;
        let raw = if epoch < p1 {
            TARGET_LADDER[epoch / self.stage1]
        } else if epoch < p2 {
            PHASE2_TARGETS[(epoch - p1) / self.stage2]
        } else {
            *PHASE2_TARGETS.last().unwrap()
        };
        raw.min(self.max_points)
    }

    fn decay_count(&self, epoch: usize) -> u32 {
        let e = epoch.min(self.freeze_epoch);
        let p1 = TARGET_LADDER.len() * self.stage1;
        let p2 = p1 + PHASE2_TARGETS.len() * self.stage2;
        if e < p1 {
            (e / self.stage1) as u32
        } else if e < p2 {
            (TARGET_LADDER.len() + (e - p1) / self.stage2) as u32
        } else {
            (TARGET_LADDER.len() + PHASE2_TARGETS.len() + (e - p2) / self.stage3) as u32
        }
    }

    pub fn sampling_radius(&self, epoch: usize) -> f64 {
        (self.r0 * self.decay.powi(self.decay_count(epoch) as i32)).max(self.radius_floor)
    }

    /// Sampling and rendering radii decay together.
    pub fn rendering_radius(&self, epoch: usize) -> f64 {
        self.sampling_radius(epoch)
    }

    pub fn at_epoch(&self, epoch: usize) -> (usize, f64, f64) {
        (
            self.target_points(epoch),
            self.sampling_radius(epoch),
            self.rendering_radius(epoch),
        )
    }
}

/// Result of a prune pass: surviving cloud plus the index of each kept point
/// in the old cloud, so per-point optimizer state can be gathered.
pub struct PruneOutcome {
    pub cloud: GaussianCloud,
    pub kept: Vec<usize>,
    /// Set when the threshold would have removed every point and the
    /// max-opacity point was retained instead.
    pub kept_everything_guard: bool,
}

fn select_rows(cloud: &GaussianCloud, kept: &[usize]) -> GaussianCloud {
    let mut out = GaussianCloud::with_capacity(kept.len(), cloud.space_tag);
    for &i in kept {
        out.push(
            cloud.mean(i),
            cloud.rotation(i),
            cloud.scale(i),
            cloud.opacities[i],
            cloud.color(i),
        );
    }
    out
}

/// Fraction of the population the extinction guard always preserves.
pub const SURVIVOR_FLOOR: f64 = 0.25;

/// Removes every point whose epoch-mean activated deformed opacity fell below
/// `threshold`. A mass extinction is guarded: at least a quarter of the
/// population survives (the highest-opacity points), so a transient opacity
/// crash cannot collapse the cloud onto a handful of stragglers.
pub fn prune(cloud: &GaussianCloud, mean_opacity: &[f64], threshold: f64) -> PruneOutcome {
    assert_eq!(mean_opacity.len(), cloud.len());
    let mut kept: Vec<usize> =
        (0..cloud.len()).filter(|&i| mean_opacity[i] >= threshold).collect();
    let mut guard = false;
    let floor = ((cloud.len() as f64 * SURVIVOR_FLOOR).ceil() as usize).min(cloud.len());
    if kept.len() < floor && cloud.len() > 0 {
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        order.sort_by(|&a, &b| {
            mean_opacity[b]
                .partial_cmp(&mean_opacity[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        kept = order[..floor].to_vec();
        kept.sort_unstable();
        guard = true;
    }
    PruneOutcome { cloud: select_rows(cloud, &kept), kept, kept_everything_guard: guard }
}

/// Prune pass for the alternative strategy: keep points that were the first
/// splat on at least one pixel during the epoch.
pub fn prune_first_splat(cloud: &GaussianCloud, was_first: &[bool]) -> PruneOutcome {
    assert_eq!(was_first.len(), cloud.len());
    let mut kept: Vec<usize> = (0..cloud.len()).filter(|&i| was_first[i]).collect();
    let mut guard = false;
    if kept.is_empty() && cloud.len() > 0 {
        kept = vec![0];
        guard = true;
    }
    PruneOutcome { cloud: select_rows(cloud, &kept), kept, kept_everything_guard: guard }
}

/// Uniformly sampled point inside a ball, via normalized Gaussian direction
/// and cube-root radius.
fn sample_in_ball<R: Rng>(rng: &mut R, radius: f64) -> [f64; 3] {
    loop {
        let mut v = [0.0f64; 3];
        let mut norm2 = 0.0;
        for x in &mut v {
            // Box-Muller.
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random();
            *x = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            norm2 += *x * *x;
        }
        if norm2 > 1e-30 {
            let r = radius * rng.random::<f64>().cbrt() / norm2.sqrt();
            return [v[0] * r, v[1] * r, v[2] * r];
        }
    }
}

/// Grows the cloud to `target_count` by scattering children inside a ball of
/// `sampling_radius` around uniformly chosen parents. Children copy parent
/// attributes; in the trainer those are recomputed by the fields anyway.
/// Targets at or below the current count are a no-op.
pub fn upsample<R: Rng>(
    cloud: &GaussianCloud,
    target_count: usize,
    sampling_radius: f64,
    rng: &mut R,
) -> GaussianCloud {
    let n = cloud.len();
    if target_count <= n || n == 0 {
        return cloud.clone();
    }
    let mut out = cloud.clone();
    for _ in n..target_count {
        let parent = rng.random_range(0..n);
        let d = sample_in_ball(rng, sampling_radius);
        let p = cloud.mean(parent);
        out.push(
            [p[0] + d[0], p[1] + d[1], p[2] + d[2]],
            cloud.rotation(parent),
            cloud.scale(parent),
            cloud.opacities[parent],
            cloud.color(parent),
        );
    }
    out
}
