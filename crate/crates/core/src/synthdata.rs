//! Procedural ground-truth generator: a small parametric head rig with known
//! Gaussians, known deformation fields and known per-frame latents, rendered
//! by the oracle path into fully reproducible datasets.
//!
//! Ground-truth images always come from the exhaustive oracle renderer and
//! share the forward model with training, so closed-loop experiments measure
//! optimization and deformation learning, never model mismatch. A smooth
//! deformed-space lighting field modulates ground-truth color (configurable
//! via `dataset.shading`), which makes appearance genuinely pose-dependent:
//! a model with static canonical parameters cannot represent it, while the
//! parameter deformation field can.

use crate::autodiff::sigmoid;
use crate::camera::Camera;
use crate::cloud::{GaussianCloud, SpaceTag};
use crate::config::Config;
use crate::deform::lbs_transform;
use crate::image::Image;
use crate::losses::TemplateBank;
use crate::rig::{rig_from_text, rig_to_text, PoseExpression, RigDefinition};
use crate::splat::oracle::render_oracle;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] crate::image::ImageError),
    #[error("camera error: {0}")]
    Camera(#[from] crate::camera::CameraError),
    #[error("rig error: {0}")]
    Rig(#[from] crate::rig::RigError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad dataset file {file}: {msg}")]
    BadFile { file: String, msg: String },
}

/// Head ellipsoid semi-axes; the whole rig lives inside the unit sphere.
pub const HEAD_AXES: [f64; 3] = [0.28, 0.34, 0.30];
const JAW_CENTER: [f64; 3] = [0.0, -0.26, 0.20];
const EYE_CENTER: [f64; 3] = [-0.11, 0.10, 0.26];

/// Smooth analytic deformation fields shared by template vertices and
/// sampled ground-truth points.
#[derive(Debug, Clone)]
struct AnalyticFields {
    n_expressions: usize,
    e_centers: Vec<[f64; 3]>,
    e_dirs: Vec<[f64; 3]>,
    e_radius: Vec<f64>,
    pose_dim: usize,
    p_centers: Vec<[f64; 3]>,
    p_dirs: Vec<[f64; 3]>,
    p_radius: Vec<f64>,
}

const EXPR_AMPLITUDE: f64 = 0.03;
const POSE_AMPLITUDE: f64 = 0.006;

impl AnalyticFields {
    fn generate(rng: &mut impl Rng, n_expressions: usize, pose_dim: usize) -> Self {
        fn centers<R: Rng>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    let d = random_unit(rng);
                    [d[0] * HEAD_AXES[0], d[1] * HEAD_AXES[1], d[2] * HEAD_AXES[2]]
                })
                .collect()
        }
        let e_centers = centers(n_expressions, rng);
        let e_dirs: Vec<[f64; 3]> = (0..n_expressions).map(|_| random_unit(rng)).collect();
        let e_radius: Vec<f64> = (0..n_expressions).map(|_| rng.random_range(0.12..0.25)).collect();
        let p_centers = centers(pose_dim, rng);
        let p_dirs: Vec<[f64; 3]> = (0..pose_dim).map(|_| random_unit(rng)).collect();
        let p_radius: Vec<f64> = (0..pose_dim).map(|_| rng.random_range(0.15..0.3)).collect();
        Self { n_expressions, e_centers, e_dirs, e_radius, pose_dim, p_centers, p_dirs, p_radius }
    }

    fn expression_basis(&self, x: &[f64; 3], out: &mut [f64]) {
        for e in 0..self.n_expressions {
            let g = falloff(x, &self.e_centers[e], self.e_radius[e]);
            for k in 0..3 {
                out[e * 3 + k] = EXPR_AMPLITUDE * g * self.e_dirs[e][k];
            }
        }
    }

    fn pose_basis(&self, x: &[f64; 3], out: &mut [f64]) {
        for f in 0..self.pose_dim {
            let g = falloff(x, &self.p_centers[f], self.p_radius[f]);
            for k in 0..3 {
                out[f * 3 + k] = POSE_AMPLITUDE * g * self.p_dirs[f][k];
            }
        }
    }

    fn skin_weights(&self, x: &[f64; 3], out: &mut [f64]) {
        let root = 0.6;
        let jaw = 1.6 * falloff(x, &JAW_CENTER, 0.17);
        let eye = 1.2 * falloff(x, &EYE_CENTER, 0.08);
        let z = root + jaw + eye;
        out[0] = root / z;
        out[1] = jaw / z;
        out[2] = eye / z;
    }
}

fn falloff(x: &[f64; 3], c: &[f64; 3], radius: f64) -> f64 {
    let d2: f64 = (0..3).map(|k| (x[k] - c[k]).powi(2)).sum();
    (-d2 / (2.0 * radius * radius)).exp()
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Smooth procedural albedo in (0,1).
pub fn albedo(x: &[f64; 3]) -> [f64; 3] {
    let clamp = |v: f64| v.clamp(0.08, 0.92);
    [
        clamp(0.55 + 0.3 * (4.0 * x[0] + 1.0).sin() * (3.0 * x[1]).cos()),
        clamp(0.45 + 0.3 * (3.0 * x[1] + 0.5).sin() * (4.0 * x[2]).cos()),
        clamp(0.5 + 0.3 * (5.0 * x[2] + 2.0).sin() * (2.0 * x[0] + 1.0).cos()),
    ]
}

/// Deformed-space lighting: a fixed directional falloff evaluated at the
/// deformed position, scaled by `shading` (0 disables it).
pub fn light_field(x_d: &[f64; 3], shading: f64) -> f64 {
    let l = [0.30, 0.77, -0.56];
    let s = sigmoid(5.0 * (l[0] * x_d[0] + l[1] * x_d[1] + l[2] * x_d[2]));
    (1.0 - shading) + shading * s
}

/// The procedural rig: joint tree + regressor, template vertex bank, and the
/// analytic fields both were sampled from.
#[derive(Debug, Clone)]
pub struct MiniRig {
    pub rig: RigDefinition,
    pub template: TemplateBank,
    fields: AnalyticFields,
}

/// Fixed joint tree: root/neck, jaw, left-eye proxy.
pub fn build_minirig(seed: u64, n_expressions: usize, n_template_vertices: usize) -> MiniRig {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let n_joints = 3;
    let pose_dim = 9 * (n_joints - 1);
    let fields = AnalyticFields::generate(&mut rng, n_expressions, pose_dim);
    let rest_joints = vec![
        0.0, -0.15, 0.0, // root / neck
        0.0, -0.12, 0.10, // jaw hinge
        -0.11, 0.10, 0.22, // eye proxy
    ];
    let joint_regressor: Vec<f64> =
        (0..n_joints * 3 * n_expressions).map(|_| rng.random_range(-0.008..0.008)).collect();
    let rig = RigDefinition {
        n_joints,
        parents: vec![-1, 0, 0],
        rest_joints,
        n_expressions,
        joint_regressor,
    };
    rig.validate().expect("procedural rig must validate");

    // Template vertices on the head surface via a Fibonacci spiral.
    let v = n_template_vertices;
    let mut positions = vec![0.0; v * 3];
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    for i in 0..v {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / v as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
        let dir = [r * phi.cos(), z, r * phi.sin()];
        for k in 0..3 {
            positions[3 * i + k] = dir[k] * HEAD_AXES[k];
        }
    }
    let mut e_bases = vec![0.0; v * n_expressions * 3];
    let mut p_bases = vec![0.0; v * pose_dim * 3];
    let mut skin = vec![0.0; v * n_joints];
    for i in 0..v {
        let x = [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]];
        fields.expression_basis(&x, &mut e_bases[i * n_expressions * 3..(i + 1) * n_expressions * 3]);
        fields.pose_basis(&x, &mut p_bases[i * pose_dim * 3..(i + 1) * pose_dim * 3]);
        fields.skin_weights(&x, &mut skin[i * n_joints..(i + 1) * n_joints]);
    }
    MiniRig {
        rig,
        template: TemplateBank {
            n_vertices: v,
            n_expressions,
            pose_dim,
            n_joints,
            positions,
            e_bases,
            p_bases,
            skin_weights: skin,
        },
        fields,
    }
}

/// Ground-truth cloud plus the per-point deformation drivers.
#[derive(Debug, Clone)]
pub struct GtCloud {
    pub cloud: GaussianCloud,
    pub e_bases: Vec<f64>,
    pub p_bases: Vec<f64>,
    pub skin_weights: Vec<f64>,
    /// Activated albedo per point, before lighting.
    pub albedo: Vec<f64>,
}

/// Samples ground-truth Gaussians on the template surface: smooth albedo,
/// isotropic scales around 0.015, opacity logit(0.9), identity rotations.
pub fn sample_gt_cloud(minirig: &MiniRig, n_points: usize, seed: u64) -> GtCloud {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0xc10d);
    let mut cloud = GaussianCloud::with_capacity(n_points, SpaceTag::Canonical);
    let ne = minirig.template.n_expressions;
    let np = minirig.template.pose_dim;
    let nj = minirig.template.n_joints;
    let mut e_bases = vec![0.0; n_points * ne * 3];
    let mut p_bases = vec![0.0; n_points * np * 3];
    let mut skin = vec![0.0; n_points * nj];
    let mut albedo_all = vec![0.0; n_points * 3];
    let opacity_logit = (0.9f64 / 0.1).ln();
    for i in 0..n_points {
        let dir = random_unit(&mut rng);
        let x = [
            dir[0] * HEAD_AXES[0],
            dir[1] * HEAD_AXES[1],
            dir[2] * HEAD_AXES[2],
        ];
        let a = albedo(&x);
        let s: f64 = 0.015 * rng.random_range(0.8..1.25);
        let logit = |v: f64| (v / (1.0 - v)).ln();
        cloud.push(
            x,
            [1.0, 0.0, 0.0, 0.0],
            [s.ln(); 3],
            opacity_logit,
            [logit(a[0]), logit(a[1]), logit(a[2])],
        );
        minirig.fields.expression_basis(&x, &mut e_bases[i * ne * 3..(i + 1) * ne * 3]);
        minirig.fields.pose_basis(&x, &mut p_bases[i * np * 3..(i + 1) * np * 3]);
        minirig.fields.skin_weights(&x, &mut skin[i * nj..(i + 1) * nj]);
        albedo_all[3 * i..3 * i + 3].copy_from_slice(&a);
    }
    GtCloud { cloud, e_bases, p_bases, skin_weights: skin, albedo: albedo_all }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// One dataset frame: image on disk, camera, initial latents.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub image_path: PathBuf,
    pub camera: Camera,
    pub pose: PoseExpression,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub minirig: MiniRig,
    pub gt: GtCloud,
    pub frames: Vec<(PoseExpression, Camera, Split)>,
    pub shading: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

fn smooth_trajectories(cfg: &Config, rig: &RigDefinition, seed: u64) -> Vec<PoseExpression> {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_0ff1_0e);
    let n = cfg.dataset_n_frames;
    let ms = cfg.dataset_motion_scale;
    let tau = std::f64::consts::TAU;
    let phases: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
    let rates: Vec<f64> = (0..64).map(|_| rng.random_range(0.8..2.2)).collect();
    (0..n)
        .map(|f| {
            let t = f as f64 / n as f64;
            let osc = |i: usize| (tau * (rates[i] * t + phases[i])).sin();
            let mut theta = vec![0.0; rig.n_joints * 3];
            // Root: yaw and pitch, a whisper of roll.
            theta[0] = ms * 0.18 * osc(0);
            theta[1] = ms * 0.35 * osc(1);
            theta[2] = ms * 0.05 * osc(2);
            // Jaw: opening about x, always nonnegative.
            theta[3] = cfg.dataset_jaw_amplitude * ms * (0.5 + 0.5 * osc(3));
            theta[4] = ms * 0.03 * osc(4);
            // Eye proxy: small wiggle.
            theta[6] = ms * 0.05 * osc(5);
            theta[7] = ms * 0.05 * osc(6);
            let psi: Vec<f64> =
                (0..rig.n_expressions).map(|e| ms * 0.6 * osc(7 + e)).collect();
            PoseExpression { theta, psi }
        })
        .collect()
}

fn orbit_cameras(cfg: &Config, seed: u64) -> Result<Vec<Camera>, DatasetError> {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0xca3e_44);
    let n = cfg.dataset_n_frames;
    let res = cfg.dataset_resolution;
    let f = 1.6 * res as f64;
    let tau = std::f64::consts::TAU;
    let phase = rng.random_range(0.0..1.0);
    let rate = rng.random_range(0.9..1.4);
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let az = 0.6 * (tau * (rate * t + phase)).sin();
            let el = 0.18 * (tau * (0.7 * t + phase * 1.7)).sin();
            let radius = 2.2;
            let pos = [
                radius * az.sin() * el.cos(),
                radius * el.sin(),
                -radius * az.cos() * el.cos(),
            ];
            Ok(Camera::look_at(
                f,
                f,
                res,
                res,
                pos,
                [0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                0.05,
                10.0,
            )?)
        })
        .collect()
}

pub fn build_scene(cfg: &Config) -> Result<SyntheticScene, DatasetError> {
    let minirig = build_minirig(cfg.rig_seed, cfg.rig_n_expressions, cfg.rig_template_vertices);
    let gt = sample_gt_cloud(&minirig, cfg.dataset_n_points, cfg.dataset_seed);
    let poses = smooth_trajectories(cfg, &minirig.rig, cfg.dataset_seed);
    let cameras = orbit_cameras(cfg, cfg.dataset_seed)?;
    let every = cfg.dataset_eval_every.max(2);
    let frames = poses
        .into_iter()
        .zip(cameras)
        .enumerate()
        .map(|(i, (pose, cam))| {
            let split = if (i + 1) % every == 0 { Split::Eval } else { Split::Train };
            (pose, cam, split)
        })
        .collect();
    Ok(SyntheticScene {
        minirig,
        gt,
        frames,
        shading: cfg.dataset_shading,
        background: cfg.loss_background,
        seed: cfg.dataset_seed,
    })
}

/// Deforms the ground-truth cloud to a pose: skinned means, lit colors.
pub fn gt_deformed_cloud(scene: &SyntheticScene, pose: &PoseExpression) -> GaussianCloud {
    let gt = &scene.gt;
    let (x_d, _) = lbs_transform(
        &gt.cloud.means,
        &gt.e_bases,
        &gt.p_bases,
        &gt.skin_weights,
        pose,
        &scene.minirig.rig,
    )
    .expect("ground-truth skinning");
    let n = gt.cloud.len();
    let mut out = gt.cloud.clone();
    out.space_tag = SpaceTag::Deformed;
    out.means = x_d;
    for i in 0..n {
        let xd = out.mean(i);
        let l = light_field(&xd, scene.shading);
        for k in 0..3 {
            let lit = (gt.albedo[3 * i + k] * l).clamp(0.02, 0.98);
            out.colors[3 * i + k] = (lit / (1.0 - lit)).ln();
        }
    }
    out
}

/// Oracle render of the ground truth at one frame.
pub fn render_gt_frame(scene: &SyntheticScene, pose: &PoseExpression, camera: &Camera) -> Image {
    let deformed = gt_deformed_cloud(scene, pose);
    render_oracle(&deformed, camera, 0.0, scene.background)
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    file: String,
    split: Split,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: Vec<f64>,
    translation: [f64; 3],
    near: f64,
    far: f64,
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    background: [f64; 3],
    frames: Vec<CameraJson>,
}

fn template_to_text(bank: &TemplateBank) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "template {} {} {} {}",
        bank.n_vertices, bank.n_expressions, bank.pose_dim, bank.n_joints
    )
    .unwrap();
    for i in 0..bank.n_vertices {
        let mut row = String::from("v");
        for k in 0..3 {
            write!(row, " {}", bank.positions[3 * i + k]).unwrap();
        }
        let de = bank.n_expressions * 3;
        for v in &bank.e_bases[i * de..(i + 1) * de] {
            write!(row, " {v}").unwrap();
        }
        let dp = bank.pose_dim * 3;
        for v in &bank.p_bases[i * dp..(i + 1) * dp] {
            write!(row, " {v}").unwrap();
        }
        for v in &bank.skin_weights[i * bank.n_joints..(i + 1) * bank.n_joints] {
            write!(row, " {v}").unwrap();
        }
        writeln!(s, "{row}").unwrap();
    }
    s
}

fn template_from_text(lines: &[&str]) -> Result<TemplateBank, DatasetError> {
    let bad = |msg: &str| DatasetError::BadFile { file: "rig.txt".into(), msg: msg.into() };
    let header = lines.first().ok_or_else(|| bad("missing template header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "template" {
        return Err(bad("bad template header"));
    }
    let v: usize = parts[1].parse().map_err(|_| bad("bad vertex count"))?;
    let ne: usize = parts[2].parse().map_err(|_| bad("bad expression count"))?;
    let np: usize = parts[3].parse().map_err(|_| bad("bad pose dim"))?;
    let nj: usize = parts[4].parse().map_err(|_| bad("bad joint count"))?;
    let mut bank = TemplateBank {
        n_vertices: v,
        n_expressions: ne,
        pose_dim: np,
        n_joints: nj,
        positions: Vec::with_capacity(v * 3),
        e_bases: Vec::with_capacity(v * ne * 3),
        p_bases: Vec::with_capacity(v * np * 3),
        skin_weights: Vec::with_capacity(v * nj),
    };
    let width = 1 + 3 + ne * 3 + np * 3 + nj;
    for i in 0..v {
        let line = lines.get(1 + i).ok_or_else(|| bad("missing template vertex"))?;
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != width || cells[0] != "v" {
            return Err(bad(&format!("bad vertex row {i}")));
        }
        let vals: Result<Vec<f64>, _> = cells[1..].iter().map(|c| c.parse()).collect();
        let vals = vals.map_err(|_| bad("bad float"))?;
        bank.positions.extend_from_slice(&vals[0..3]);
        bank.e_bases.extend_from_slice(&vals[3..3 + ne * 3]);
        bank.p_bases.extend_from_slice(&vals[3 + ne * 3..3 + ne * 3 + np * 3]);
        bank.skin_weights.extend_from_slice(&vals[3 + ne * 3 + np * 3..]);
    }
    Ok(bank)
}

fn fnv_hash(text: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Writes the dataset directory: `frames/frame_%04d.png`, `cameras.json`,
/// `latents.csv`, `rig.txt` (with the template bank appended), `meta.txt`.
pub fn generate_dataset(scene: &SyntheticScene, cfg: &Config, dir: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir.join("frames"))?;
    let n = scene.frames.len();
    let images: Vec<Image> = crate::parallel::map_collect(n, |i| {
        let (pose, cam, _) = &scene.frames[i];
        render_gt_frame(scene, pose, cam)
    });
    let mut cjson = CamerasFile { background: scene.background, frames: Vec::with_capacity(n) };
    let mut latents = String::new();
    let nj3 = scene.minirig.rig.n_joints * 3;
    let ne = scene.minirig.rig.n_expressions;
    write!(latents, "frame").unwrap();
    for k in 0..nj3 {
        write!(latents, ",theta_{k}").unwrap();
    }
    for k in 0..ne {
        write!(latents, ",psi_{k}").unwrap();
    }
    writeln!(latents).unwrap();
    for (i, ((pose, cam, split), img)) in scene.frames.iter().zip(images.iter()).enumerate() {
        let file = format!("frames/frame_{i:04}.png");
        img.save_png(&dir.join(&file))?;
        let mut rotation = Vec::with_capacity(9);
        for r in 0..3 {
            rotation.extend_from_slice(&cam.rotation[r]);
        }
        cjson.frames.push(CameraJson {
            file,
            split: *split,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation,
            translation: cam.translation,
            near: cam.near,
            far: cam.far,
        });
        write!(latents, "{i}").unwrap();
        for v in &pose.theta {
            write!(latents, ",{v}").unwrap();
        }
        for v in &pose.psi {
            write!(latents, ",{v}").unwrap();
        }
        writeln!(latents).unwrap();
    }
    std::fs::write(dir.join("cameras.json"), serde_json::to_string_pretty(&cjson)?)?;
    std::fs::write(dir.join("latents.csv"), latents)?;
    let mut rig_text = rig_to_text(&scene.minirig.rig);
    rig_text.push_str(&template_to_text(&scene.minirig.template));
    std::fs::write(dir.join("rig.txt"), rig_text)?;
    let dump = cfg.dump();
    let meta = format!(
        "seed = {}\nframes = {}\nconfig_hash = {:016x}\n--- config ---\n{}",
        scene.seed, n, fnv_hash(&dump), dump
    );
    std::fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

/// A dataset loaded back from disk (images stay on disk until asked for).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub rig: RigDefinition,
    pub template: TemplateBank,
    pub frames: Vec<FrameRecord>,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn train_frames(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == Split::Train).collect()
    }

    pub fn eval_frames(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == Split::Eval).collect()
    }

    pub fn load_image(&self, frame: usize) -> Result<Image, DatasetError> {
        let rec = &self.frames[frame];
        let img = Image::load_png(&rec.image_path)?;
        if img.width != rec.camera.width || img.height != rec.camera.height {
            return Err(DatasetError::BadFile {
                file: rec.image_path.display().to_string(),
                msg: "image resolution does not match camera".into(),
            });
        }
        Ok(img)
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(dir.join("cameras.json"))?;
    let cjson: CamerasFile = serde_json::from_str(&text)?;
    let rig_text = std::fs::read_to_string(dir.join("rig.txt"))?;
    let (rig, consumed) = rig_from_text(&rig_text)?;
    let rest: Vec<&str> = rig_text.lines().skip(consumed).collect();
    let template = template_from_text(&rest)?;

    let latents = std::fs::read_to_string(dir.join("latents.csv"))?;
    let mut lat_rows: Vec<PoseExpression> = Vec::new();
    for (i, line) in latents.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let expected = 1 + rig.n_joints * 3 + rig.n_expressions;
        if cells.len() != expected {
            return Err(DatasetError::BadFile {
                file: "latents.csv".into(),
                msg: format!("row {i} has {} cells, expected {expected}", cells.len()),
            });
        }
        let vals: Result<Vec<f64>, _> = cells[1..].iter().map(|c| c.parse()).collect();
        let vals = vals.map_err(|_| DatasetError::BadFile {
            file: "latents.csv".into(),
            msg: format!("bad float in row {i}"),
        })?;
        lat_rows.push(PoseExpression {
            theta: vals[..rig.n_joints * 3].to_vec(),
            psi: vals[rig.n_joints * 3..].to_vec(),
        });
    }
    if lat_rows.len() != cjson.frames.len() {
        return Err(DatasetError::BadFile {
            file: "latents.csv".into(),
            msg: "frame count mismatch with cameras.json".into(),
        });
    }
    let mut frames = Vec::with_capacity(cjson.frames.len());
    for (cj, pose) in cjson.frames.into_iter().zip(lat_rows) {
        let rotation = [
            [cj.rotation[0], cj.rotation[1], cj.rotation[2]],
            [cj.rotation[3], cj.rotation[4], cj.rotation[5]],
            [cj.rotation[6], cj.rotation[7], cj.rotation[8]],
        ];
        let camera = Camera::new(
            cj.fx, cj.fy, cj.cx, cj.cy, cj.width, cj.height, rotation, cj.translation, cj.near,
            cj.far,
        )?;
        frames.push(FrameRecord { image_path: dir.join(&cj.file), camera, pose, split: cj.split });
    }
    Ok(Dataset { dir: dir.to_path_buf(), rig, template, frames, background: cjson.background })
}
