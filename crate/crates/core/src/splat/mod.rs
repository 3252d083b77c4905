//! Differentiable 3D Gaussian splatting.
//!
//! `project_cloud` activates a deformed cloud and maps every point to a 2D
//! Gaussian (EWA affine approximation); `oracle::render_oracle` composites
//! every point at every pixel with a global depth sort; `raster::render_fast`
//! does the same through 16x16 tiles with conservative per-point bounding
//! rectangles and records a tape for `raster::render_backward`.
//!
//! The alpha cutoff below which a contribution counts as zero is applied in
//! both paths, and the bounding radius is derived from that cutoff, so the
//! fast path composites exactly the same contribution sequence per pixel as
//! the oracle.

pub mod oracle;
pub mod raster;

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::rotation::{mat3_mul_vec, normalize_quaternion, quat_to_matrix, Mat3};

/// Dilation added to the diagonal of every projected covariance, in px^2.
pub const LOW_PASS: f64 = 0.3;
/// Per-contribution opacity clamp.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions below this alpha are treated as exactly zero.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
/// Front-to-back compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Tile edge in pixels for the fast path.
pub const TILE: usize = 16;

/// A point projected to the image plane, with activated attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2DGaussian {
    pub mean: [f64; 2],
    /// Projected covariance (a, b, c) for [[a, b], [b, c]], low-pass included.
    pub cov: [f64; 3],
    /// Inverse covariance (A, B, C).
    pub conic: [f64; 3],
    /// View-space depth.
    pub depth: f64,
    /// Activated (sigmoid) opacity.
    pub opacity: f64,
    /// Activated (sigmoid) color.
    pub color: [f64; 3],
    /// Conservative pixel-space bounding radius; alpha < cutoff outside.
    pub radius: f64,
}

/// exp with an overflow guard; raw scale logits above 20 saturate.
pub fn scale_activation(raw: f64, rendering_radius: f64) -> f64 {
    raw.min(20.0).exp() + rendering_radius
}

pub fn scale_activation_derivative(raw: f64) -> f64 {
    if raw > 20.0 {
        0.0
    } else {
        raw.exp()
    }
}

/// Sigma = R * diag(s)^2 * R^T for an activated scale vector.
pub fn covariance_3d(rot: &Mat3, s: &[f64; 3]) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = rot[i][0] * s[0] * s[0] * rot[j][0]
                + rot[i][1] * s[1] * s[1] * rot[j][1]
                + rot[i][2] * s[2] * s[2] * rot[j][2];
        }
    }
    out
}

/// Conservative bounding radius: outside it, opacity*exp(-q/2) < ALPHA_CUTOFF.
/// Returns None when the point can never reach the cutoff.
fn bounding_radius(cov: &[f64; 3], opacity: f64) -> Option<f64> {
    let o = opacity.min(ALPHA_CLAMP);
    if o <= ALPHA_CUTOFF {
        return None;
    }
    let mid = 0.5 * (cov[0] + cov[2]);
    let half = ((0.5 * (cov[0] - cov[2])).powi(2) + cov[1] * cov[1]).sqrt();
    let lambda_max = mid + half;
    let q_max = 2.0 * (o / ALPHA_CUTOFF).ln();
    Some((q_max * lambda_max).sqrt())
}

/// Projects one Gaussian; `None` marks a culled point (outside the depth
/// planes or unable to reach the alpha cutoff anywhere).
pub fn project_gaussian(
    mean_world: &[f64; 3],
    sigma: &Mat3,
    opacity: f64,
    color: [f64; 3],
    camera: &Camera,
) -> Option<Projected2DGaussian> {
    let cam = camera.world_to_camera(mean_world);
    let z = cam[2];
    if z <= camera.near || z >= camera.far {
        return None;
    }
    let mean = camera.project(&cam);
    let (fx, fy) = (camera.fx, camera.fy);
    let inv_z = 1.0 / z;
    let inv_z2 = inv_z * inv_z;
    // J rows of the affine approximation of the projective map.
    let j = [
        [fx * inv_z, 0.0, -fx * cam[0] * inv_z2],
        [0.0, fy * inv_z, -fy * cam[1] * inv_z2],
    ];
    // M = J * R_world_to_cam (2x3), Sigma' = M Sigma M^T + LOW_PASS I.
    let r = &camera.rotation;
    let mut m = [[0.0; 3]; 2];
    for row in 0..2 {
        for col in 0..3 {
            m[row][col] = j[row][0] * r[0][col] + j[row][1] * r[1][col] + j[row][2] * r[2][col];
        }
    }
    let ms = [
        mat3_mul_vec(sigma, &m[0]),
        mat3_mul_vec(sigma, &m[1]),
    ];
    let a = m[0][0] * ms[0][0] + m[0][1] * ms[0][1] + m[0][2] * ms[0][2] + LOW_PASS;
    let b = m[0][0] * ms[1][0] + m[0][1] * ms[1][1] + m[0][2] * ms[1][2];
    let c = m[1][0] * ms[1][0] + m[1][1] * ms[1][1] + m[1][2] * ms[1][2] + LOW_PASS;
    let det = a * c - b * b;
    let conic = [c / det, -b / det, a / det];
    let radius = bounding_radius(&[a, b, c], opacity)?;
    Some(Projected2DGaussian {
        mean,
        cov: [a, b, c],
        conic,
        depth: z,
        opacity,
        color,
        radius,
    })
}

/// Opacity-weighted Gaussian falloff at a pixel center, clamped and cut off.
/// Zero means "no contribution" in both render paths.
pub fn gaussian_pixel_weight(g: &Projected2DGaussian, px: f64, py: f64) -> f64 {
    let dx = px - g.mean[0];
    let dy = py - g.mean[1];
    let q = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
    let alpha = (g.opacity * crate::autodiff::fastmath::fast_exp(-0.5 * q)).min(ALPHA_CLAMP);
    if alpha < ALPHA_CUTOFF {
        0.0
    } else {
        alpha
    }
}

/// Front-to-back compositing of pre-sorted (color, alpha) contributions over
/// a background color.
pub fn composite_pixel(contributions: &[([f64; 3], f64)], background: [f64; 3]) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    let mut transmittance = 1.0;
    for &(color, alpha) in contributions {
        if alpha < ALPHA_CUTOFF {
            continue;
        }
        let w = alpha * transmittance;
        rgb[0] += color[0] * w;
        rgb[1] += color[1] * w;
        rgb[2] += color[2] * w;
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_EPS {
            break;
        }
    }
    [
        rgb[0] + background[0] * transmittance,
        rgb[1] + background[1] * transmittance,
        rgb[2] + background[2] * transmittance,
    ]
}

/// Activated projection of an entire deformed cloud, ready for compositing.
/// Culled points have `radius = -1` and are skipped by both render paths.
#[derive(Debug, Clone)]
pub struct ProjectedScene {
    pub n: usize,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub rendering_radius: f64,
    pub mean2d: Vec<f64>,
    pub cov2d: Vec<f64>,
    pub conic: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
    pub radius: Vec<f64>,
    // Cached inputs and activations for the backward pass.
    pub mean_world: Vec<f64>,
    pub scale_act: Vec<f64>,
    pub unit_quat: Vec<f64>,
    pub quat_norm: Vec<f64>,
    pub rot: Vec<f64>,
}

impl ProjectedScene {
    pub fn is_culled(&self, i: usize) -> bool {
        self.radius[i] < 0.0
    }

    /// Whether the point's bounding box overlaps the image at all; escaped
    /// points are invisible and contribute no gradient.
    pub fn in_view(&self, i: usize) -> bool {
        if self.is_culled(i) {
            return false;
        }
        let (mx, my, r) = (self.mean2d[2 * i], self.mean2d[2 * i + 1], self.radius[i]);
        mx + r >= 0.0 && my + r >= 0.0 && mx - r <= self.width as f64 && my - r <= self.height as f64
    }

    pub fn gaussian(&self, i: usize) -> Projected2DGaussian {
        Projected2DGaussian {
            mean: [self.mean2d[2 * i], self.mean2d[2 * i + 1]],
            cov: [self.cov2d[3 * i], self.cov2d[3 * i + 1], self.cov2d[3 * i + 2]],
            conic: [self.conic[3 * i], self.conic[3 * i + 1], self.conic[3 * i + 2]],
            depth: self.depth[i],
            opacity: self.opacity[i],
            color: [self.color[3 * i], self.color[3 * i + 1], self.color[3 * i + 2]],
            radius: self.radius[i],
        }
    }
}

/// Activates raw cloud attributes and projects every point.
pub fn project_cloud(
    cloud: &GaussianCloud,
    camera: &Camera,
    rendering_radius: f64,
    background: [f64; 3],
) -> ProjectedScene {
    let n = cloud.len();
    let rows = crate::parallel::map_collect(n, |i| {
        let raw_q = cloud.rotation(i);
        let (uq, rot) = normalize_quaternion(&raw_q)
            .unwrap_or_else(|_| ([1.0, 0.0, 0.0, 0.0], quat_to_matrix(&[1.0, 0.0, 0.0, 0.0])));
        let qn = raw_q.iter().map(|c| c * c).sum::<f64>().sqrt();
        let s_raw = cloud.scale(i);
        let s = [
            scale_activation(s_raw[0], rendering_radius),
            scale_activation(s_raw[1], rendering_radius),
            scale_activation(s_raw[2], rendering_radius),
        ];
        let opacity = crate::autodiff::sigmoid(cloud.opacities[i]);
        let c_raw = cloud.color(i);
        let color = [
            crate::autodiff::sigmoid(c_raw[0]),
            crate::autodiff::sigmoid(c_raw[1]),
            crate::autodiff::sigmoid(c_raw[2]),
        ];
        let sigma = covariance_3d(&rot, &s);
        let proj = project_gaussian(&cloud.mean(i), &sigma, opacity, color, camera);
        (proj, s, uq, qn, rot, opacity, color)
    });

    let mut scene = ProjectedScene {
        n,
        width: camera.width,
        height: camera.height,
        background,
        rendering_radius,
        mean2d: vec![0.0; 2 * n],
        cov2d: vec![0.0; 3 * n],
        conic: vec![0.0; 3 * n],
        depth: vec![0.0; n],
        opacity: vec![0.0; n],
        color: vec![0.0; 3 * n],
        radius: vec![-1.0; n],
        mean_world: cloud.means.clone(),
        scale_act: vec![0.0; 3 * n],
        unit_quat: vec![0.0; 4 * n],
        quat_norm: vec![0.0; n],
        rot: vec![0.0; 9 * n],
    };
    for (i, (proj, s, uq, qn, rot, opacity, color)) in rows.into_iter().enumerate() {
        scene.scale_act[3 * i..3 * i + 3].copy_from_slice(&s);
        scene.unit_quat[4 * i..4 * i + 4].copy_from_slice(&uq);
        scene.quat_norm[i] = qn;
        for r in 0..3 {
            scene.rot[9 * i + 3 * r..9 * i + 3 * r + 3].copy_from_slice(&rot[r]);
        }
        scene.opacity[i] = opacity;
        scene.color[3 * i..3 * i + 3].copy_from_slice(&color);
        if let Some(p) = proj {
            scene.mean2d[2 * i..2 * i + 2].copy_from_slice(&p.mean);
            scene.cov2d[3 * i..3 * i + 3].copy_from_slice(&p.cov);
            scene.conic[3 * i..3 * i + 3].copy_from_slice(&p.conic);
            scene.depth[i] = p.depth;
            scene.radius[i] = p.radius;
        }
    }
    scene
}

/// One pixel walked front to back over an ordered candidate list.
/// Returns premultiplied color (background excluded), final transmittance and
/// the exclusive end position in `order` where the walk stopped.
pub fn walk_pixel(
    scene: &ProjectedScene,
    order: &[u32],
    px: f64,
    py: f64,
) -> ([f64; 3], f64, usize) {
    let mut rgb = [0.0; 3];
    let mut transmittance = 1.0;
    let mut used = 0;
    for (pos, &idx) in order.iter().enumerate() {
        let i = idx as usize;
        let dx = px - scene.mean2d[2 * i];
        let dy = py - scene.mean2d[2 * i + 1];
        let q = scene.conic[3 * i] * dx * dx
            + 2.0 * scene.conic[3 * i + 1] * dx * dy
            + scene.conic[3 * i + 2] * dy * dy;
        let alpha = (scene.opacity[i] * crate::autodiff::fastmath::fast_exp(-0.5 * q)).min(ALPHA_CLAMP);
        if alpha < ALPHA_CUTOFF {
            continue;
        }
        let w = alpha * transmittance;
        rgb[0] += scene.color[3 * i] * w;
        rgb[1] += scene.color[3 * i + 1] * w;
        rgb[2] += scene.color[3 * i + 2] * w;
        transmittance *= 1.0 - alpha;
        used = pos + 1;
        if transmittance < TRANSMITTANCE_EPS {
            break;
        }
    }
    (rgb, transmittance, used)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::finite_diff_grad;
    use crate::rotation::Quat;

    fn identity_camera(width: usize, height: usize, f: f64) -> Camera {
        Camera::new(
            f,
            f,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0, 0.0, 0.0],
            0.01,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn covariance_identity_cases() {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = covariance_3d(&eye, &[1.0, 1.0, 1.0]);
        assert_eq!(s, eye);
        let s = covariance_3d(&eye, &[2.0, 1.0, 1.0]);
        assert_eq!(s[0][0], 4.0);
        assert_eq!(s[1][1], 1.0);
        assert_eq!(s[2][2], 1.0);
        assert_eq!(s[0][1], 0.0);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..30 {
            let raw: Quat = std::array::from_fn(|_| rng.random_range(-1.0..1.0_f64));
            if raw.iter().map(|c| c * c).sum::<f64>() < 0.1 {
                continue;
            }
            let (_, rot) = normalize_quaternion(&raw).unwrap();
            let s = [
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
            ];
            let sigma = covariance_3d(&rot, &s);
            // Symmetry.
            for i in 0..3 {
                for j in 0..3 {
                    assert!((sigma[i][j] - sigma[j][i]).abs() < 1e-12);
                }
            }
            // R's columns are eigenvectors with eigenvalue s_k^2.
            for k in 0..3 {
                let v = [rot[0][k], rot[1][k], rot[2][k]];
                let sv = mat3_mul_vec(&sigma, &v);
                for i in 0..3 {
                    assert!(
                        (sv[i] - s[k] * s[k] * v[i]).abs() < 1e-9,
                        "eigencheck axis {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn scale_activation_floor_and_unit() {
        assert!((scale_activation(0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((scale_activation(-700.0, 0.004) - 0.004).abs() < 1e-12);
        // Final-stage radius from the insertion/deletion schedule.
        assert_eq!(
            crate::lifecycle::LifecycleSchedule::paper_default(100_000).sampling_radius(120),
            0.004
        );
    }

    #[test]
    fn on_axis_isotropic_projection_closed_form() {
        let cam = identity_camera(64, 64, 90.0);
        let sigma_sq = 0.05 * 0.05;
        let eye_sigma = [
            [sigma_sq, 0.0, 0.0],
            [0.0, sigma_sq, 0.0],
            [0.0, 0.0, sigma_sq],
        ];
        let z = 2.5;
        let p = project_gaussian(&[0.0, 0.0, z], &eye_sigma, 0.9, [1.0, 0.0, 0.0], &cam).unwrap();
        let expected = (90.0 * 0.05 / z).powi(2) + LOW_PASS;
        assert!((p.cov[0] - expected).abs() < 1e-12);
        assert!((p.cov[2] - expected).abs() < 1e-12);
        assert!(p.cov[1].abs() < 1e-12);
        assert_eq!(p.mean, [32.0, 32.0]);
        assert!((p.depth - z).abs() < 1e-15);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = identity_camera(64, 64, 90.0);
        let eye = [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.01]];
        assert!(project_gaussian(&[0.0, 0.0, -1.0], &eye, 0.9, [1.0; 3], &cam).is_none());
        assert!(project_gaussian(&[0.0, 0.0, 1000.0], &eye, 0.9, [1.0; 3], &cam).is_none());
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let cam = Camera::look_at(
            75.0,
            80.0,
            64,
            48,
            [0.4, -0.3, -2.0],
            [0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            0.01,
            100.0,
        )
        .unwrap();
        let x0 = [0.2, 0.1, -0.05];
        // J is the Jacobian of the world->pixel map composed with the view
        // rotation stripped: check d(pixel)/d(cam point) directly.
        let cam_pt = cam.world_to_camera(&x0);
        let (fx, fy) = (cam.fx, cam.fy);
        let z = cam_pt[2];
        let j = [
            [fx / z, 0.0, -fx * cam_pt[0] / (z * z)],
            [0.0, fy / z, -fy * cam_pt[1] / (z * z)],
        ];
        for row in 0..2 {
            let f = |v: &[f64]| {
                let p = cam.project(&[v[0], v[1], v[2]]);
                p[row]
            };
            let fd = finite_diff_grad(f, &cam_pt, 1e-6);
            for col in 0..3 {
                let rel = (fd[col] - j[row][col]).abs() / fd[col].abs().max(1e-6);
                assert!(rel < 1e-6, "J[{row}][{col}]: fd {} vs {}", fd[col], j[row][col]);
            }
        }
    }

    #[test]
    fn pixel_weight_at_mean_is_opacity() {
        let g = Projected2DGaussian {
            mean: [10.0, 12.0],
            cov: [1.0, 0.0, 1.0],
            conic: [1.0, 0.0, 1.0],
            depth: 1.0,
            opacity: 0.7,
            color: [0.0; 3],
            radius: 4.0,
        };
        assert!((gaussian_pixel_weight(&g, 10.0, 12.0) - 0.7).abs() < 1e-15);
        // Clamp: opacity near 1 saturates at 0.99.
        let g2 = Projected2DGaussian { opacity: 0.9999, ..g };
        assert_eq!(gaussian_pixel_weight(&g2, 10.0, 12.0), ALPHA_CLAMP);
        // |d|^2 = 2 with identity conic: falloff of exactly e^-1.
        let w = gaussian_pixel_weight(&g, 11.0, 13.0);
        assert!((w - 0.7 * crate::autodiff::fastmath::fast_exp(-1.0)).abs() < 1e-16);
    }

    #[test]
    fn pixel_weight_monotone_along_ray() {
        let g = Projected2DGaussian {
            mean: [0.0, 0.0],
            cov: [2.0, 0.0, 2.0],
            conic: [0.5, 0.0, 0.5],
            depth: 1.0,
            opacity: 0.8,
            color: [0.0; 3],
            radius: 6.0,
        };
        let mut prev = f64::INFINITY;
        for step in 0..100 {
            let t = step as f64 * 0.05;
            let w = gaussian_pixel_weight(&g, 0.6 * t, 0.8 * t);
            assert!(w <= prev + 1e-15, "non-monotone at t={t}");
            prev = w;
        }
    }

    #[test]
    fn composite_single_and_pair() {
        let c = composite_pixel(&[([0.5, 0.25, 1.0], 0.99)], [0.0; 3]);
        for (got, want) in c.iter().zip([0.495, 0.2475, 0.99]) {
            assert!((got - want).abs() < 1e-15);
        }
        let bg = [1.0, 1.0, 1.0];
        let c = composite_pixel(&[([1.0, 0.0, 0.0], 0.5), ([0.0, 1.0, 0.0], 0.5)], bg);
        // 0.5*c1 + 0.25*c2 + 0.25*bg
        assert!((c[0] - 0.75).abs() < 1e-15);
        assert!((c[1] - 0.5).abs() < 1e-15);
        assert!((c[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn composite_matches_literal_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        // Alphas chosen so neither the cutoff nor the early-out triggers,
        // making the plain blending formula an exact oracle.
        for _ in 0..50 {
            let n = rng.random_range(1..20);
            let contribs: Vec<([f64; 3], f64)> = (0..n)
                .map(|_| {
                    (
                        [rng.random(), rng.random(), rng.random()],
                        rng.random_range(0.02..0.3),
                    )
                })
                .collect();
            let bg = [rng.random(), rng.random(), rng.random()];
            let got = composite_pixel(&contribs, bg);
            for k in 0..3 {
                let mut expect = 0.0;
                for (i, &(c, a)) in contribs.iter().enumerate() {
                    let t: f64 = contribs[..i].iter().map(|&(_, aj)| 1.0 - aj).product();
                    expect += c[k] * a * t;
                }
                let t_final: f64 = contribs.iter().map(|&(_, aj)| 1.0 - aj).product();
                expect += bg[k] * t_final;
                assert!((got[k] - expect).abs() < 1e-12);
            }
        }
    }
}
