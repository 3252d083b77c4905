//! Tiled fast rasterizer with a tape for the analytic backward pass.
//!
//! Forward: per-point conservative bounding rectangles feed 16x16-tile
//! candidate lists, each sorted front to back (depth, then point index); every
//! pixel walks its tile's list with the shared compositing rule. Because the
//! bounding radius is derived from the alpha cutoff, each pixel composites
//! exactly the contribution sequence the oracle sees.
//!
//! Backward: per-tile partial gradients are folded in tile order, then a
//! per-point pass chains through projection, covariance, activation and
//! quaternion normalization. Results are independent of thread count.

use super::{project_cloud, ProjectedScene, ALPHA_CLAMP, ALPHA_CUTOFF, TILE};
use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::image::Image;
use crate::parallel;
use crate::rotation::quat_to_matrix_backward;

pub struct RenderTape {
    pub scene: ProjectedScene,
    pub camera: Camera,
    pub tile_lists: Vec<Vec<u32>>,
    /// Candidate bounds and attributes in tile-list order, so pixel walks
    /// stream contiguous memory.
    pub tile_packed: Vec<TileData>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per-pixel transmittance after the walk stopped.
    pub t_final: Vec<f64>,
    /// Per-pixel exclusive end position in the tile list.
    pub n_used: Vec<u32>,
}

/// Packed per-candidate stride for attributes: conic, opacity, color.
pub const PACKED: usize = 7;
/// Bounds stride: pixel-space mean and bounding radius.
pub const BOUNDS: usize = 3;
/// Pixel edge of the sub-bins inside a tile.
pub const BIN: usize = 4;
const BINS_PER_AXIS: usize = TILE / BIN;

/// Per-tile candidate data: compact bounds, full attributes, and per-4x4-bin
/// candidate position lists so a pixel only scans candidates whose bounding
/// box touches its bin.
pub struct TileData {
    pub bounds: Vec<f64>,
    pub attrs: Vec<f64>,
    pub bins: Vec<Vec<u32>>,
}

fn pack_tiles(
    scene: &ProjectedScene,
    lists: &[Vec<u32>],
    tiles_x: usize,
) -> Vec<TileData> {
    let lists_ref = &lists;
    parallel::map_collect(lists.len(), |t| {
        let list = &lists_ref[t];
        let tile_px = ((t % tiles_x) * TILE) as f64;
        let tile_py = ((t / tiles_x) * TILE) as f64;
        let mut bounds = Vec::with_capacity(list.len() * BOUNDS);
        let mut attrs = Vec::with_capacity(list.len() * PACKED);
        let mut bins = vec![Vec::new(); BINS_PER_AXIS * BINS_PER_AXIS];
        for (pos, &idx) in list.iter().enumerate() {
            let i = idx as usize;
            let (mx, my, r) =
                (scene.mean2d[2 * i], scene.mean2d[2 * i + 1], scene.radius[i]);
            bounds.extend_from_slice(&[mx, my, r]);
            attrs.extend_from_slice(&[
                scene.conic[3 * i],
                scene.conic[3 * i + 1],
                scene.conic[3 * i + 2],
                scene.opacity[i],
                scene.color[3 * i],
                scene.color[3 * i + 1],
                scene.color[3 * i + 2],
            ]);
            // Bins whose pixel area intersects the candidate's box.
            let b0x = (((mx - r - tile_px) / BIN as f64).floor().max(0.0) as usize)
                .min(BINS_PER_AXIS - 1);
            let b1x = (((mx + r - tile_px) / BIN as f64).floor().max(0.0) as usize)
                .min(BINS_PER_AXIS - 1);
            let b0y = (((my - r - tile_py) / BIN as f64).floor().max(0.0) as usize)
                .min(BINS_PER_AXIS - 1);
            let b1y = (((my + r - tile_py) / BIN as f64).floor().max(0.0) as usize)
                .min(BINS_PER_AXIS - 1);
            for by in b0y..=b1y {
                for bx in b0x..=b1x {
                    bins[by * BINS_PER_AXIS + bx].push(pos as u32);
                }
            }
        }
        TileData { bounds, attrs, bins }
    })
}

/// Front-to-back walk over one tile's candidates visible from the pixel's
/// bin. Entries whose bounding box misses the pixel are skipped without
/// evaluation; by the bounding-radius construction their alpha is below the
/// cutoff anyway, so the result is bit-identical to the unbinned walk.
#[inline]
fn walk_pixel_packed(
    tile: &TileData,
    bin_list: &[u32],
    px: f64,
    py: f64,
) -> ([f64; 3], f64, usize) {
    let mut rgb = [0.0; 3];
    let mut transmittance = 1.0;
    let mut used = 0;
    for &pos32 in bin_list {
        let pos = pos32 as usize;
        let b = &tile.bounds[pos * BOUNDS..(pos + 1) * BOUNDS];
        let dx = px - b[0];
        let dy = py - b[1];
        if dx.abs() > b[2] || dy.abs() > b[2] {
            continue;
        }
        let entry = &tile.attrs[pos * PACKED..(pos + 1) * PACKED];
        let q = entry[0] * dx * dx + 2.0 * entry[1] * dx * dy + entry[2] * dy * dy;
        let alpha = (entry[3] * crate::autodiff::fastmath::fast_exp(-0.5 * q)).min(super::ALPHA_CLAMP);
        if alpha < ALPHA_CUTOFF {
            continue;
        }
        let w = alpha * transmittance;
        rgb[0] += entry[4] * w;
        rgb[1] += entry[5] * w;
        rgb[2] += entry[6] * w;
        transmittance *= 1.0 - alpha;
        used = pos + 1;
        if transmittance < super::TRANSMITTANCE_EPS {
            break;
        }
    }
    (rgb, transmittance, used)
}

/// Gradients w.r.t. the raw (pre-activation) deformed cloud attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrads {
    pub means: Vec<f64>,
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
    pub colors: Vec<f64>,
}

impl PointGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            scales: vec![0.0; 3 * n],
            opacities: vec![0.0; n],
            colors: vec![0.0; 3 * n],
        }
    }
}

fn tile_range(center: f64, radius: f64, tiles: usize) -> (usize, usize) {
    let lo = ((center - radius) / TILE as f64).floor().max(0.0) as usize;
    let hi = ((center + radius) / TILE as f64).floor().min(tiles as f64 - 1.0) as usize;
    (lo, hi)
}

fn build_tile_lists(scene: &ProjectedScene, tiles_x: usize, tiles_y: usize) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for i in 0..scene.n {
        if scene.is_culled(i) {
            continue;
        }
        let mx = scene.mean2d[2 * i];
        let my = scene.mean2d[2 * i + 1];
        let r = scene.radius[i];
        if mx + r < 0.0
            || my + r < 0.0
            || mx - r > (tiles_x * TILE) as f64
            || my - r > (tiles_y * TILE) as f64
        {
            continue;
        }
        let (x0, x1) = tile_range(mx, r, tiles_x);
        let (y0, y1) = tile_range(my, r, tiles_y);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    // Front-to-back order inside each tile, ties broken by point index.
    let depth = &scene.depth;
    let lists_ref = &lists;
    parallel::map_collect(lists.len(), |t| {
        let mut l = lists_ref[t].clone();
        l.sort_unstable_by(|&a, &b| {
            depth[a as usize]
                .partial_cmp(&depth[b as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        l
    })
}

pub fn render_fast(
    cloud: &GaussianCloud,
    camera: &Camera,
    rendering_radius: f64,
    background: [f64; 3],
) -> (Image, RenderTape) {
    let scene = project_cloud(cloud, camera, rendering_radius, background);
    render_fast_scene(scene, camera)
}

pub fn render_fast_scene(scene: ProjectedScene, camera: &Camera) -> (Image, RenderTape) {
    let (w, h) = (scene.width, scene.height);
    let background = scene.background;
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let tile_lists = build_tile_lists(&scene, tiles_x, tiles_y);
    let tile_packed = pack_tiles(&scene, &tile_lists, tiles_x);

    struct TileOut {
        rgb: Vec<f64>,
        t: Vec<f64>,
        used: Vec<u32>,
    }
    let packed_ref = &tile_packed;
    let outs = parallel::map_collect(tiles_x * tiles_y, |t| {
        let tx = t % tiles_x;
        let ty = t / tiles_x;
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let tw = (w - x0).min(TILE);
        let th = (h - y0).min(TILE);
        let packed = &packed_ref[t];
        let mut out =
            TileOut { rgb: vec![0.0; tw * th * 3], t: vec![1.0; tw * th], used: vec![0; tw * th] };
        for py in 0..th {
            for px in 0..tw {
                let bin = (py / BIN) * BINS_PER_AXIS + px / BIN;
                let (rgb, tr, used) = walk_pixel_packed(
                    packed,
                    &packed.bins[bin],
                    (x0 + px) as f64 + 0.5,
                    (y0 + py) as f64 + 0.5,
                );
                let o = (py * tw + px) * 3;
                out.rgb[o] = rgb[0] + background[0] * tr;
                out.rgb[o + 1] = rgb[1] + background[1] * tr;
                out.rgb[o + 2] = rgb[2] + background[2] * tr;
                out.t[py * tw + px] = tr;
                out.used[py * tw + px] = used as u32;
            }
        }
        out
    });

    let mut img = Image::new(w, h);
    let mut t_final = vec![1.0; w * h];
    let mut n_used = vec![0u32; w * h];
    for (t, out) in outs.into_iter().enumerate() {
        let tx = t % tiles_x;
        let ty = t / tiles_x;
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let tw = (w - x0).min(TILE);
        let th = (h - y0).min(TILE);
        for py in 0..th {
            let row = (y0 + py) * w + x0;
            img.data[(row * 3)..(row + tw) * 3].copy_from_slice(&out.rgb[py * tw * 3..(py * tw + tw) * 3]);
            t_final[row..row + tw].copy_from_slice(&out.t[py * tw..py * tw + tw]);
            n_used[row..row + tw].copy_from_slice(&out.used[py * tw..py * tw + tw]);
        }
    }
    let camera = camera.clone();
    (
        img,
        RenderTape { scene, camera, tile_lists, tile_packed, tiles_x, tiles_y, t_final, n_used },
    )
}

/// Per-point image-space adjoints accumulated during the tile sweep:
/// d mean2d (2), d conic (3), d opacity_act (1), d color_act (3).
const IMG_GRAD_W: usize = 9;

/// Analytic adjoints of `render_fast` w.r.t. every raw cloud attribute.
pub fn render_backward(tape: &RenderTape, d_image: &[f64]) -> PointGrads {
    let scene = &tape.scene;
    let (w, h) = (scene.width, scene.height);
    assert_eq!(d_image.len(), w * h * 3, "image adjoint shape");
    let bg = scene.background;

    // Pass 1: per-tile sparse gradients aligned with the tile lists, walking
    // the packed candidate arrays.
    let lists = &tape.tile_lists;
    let packed_tiles = &tape.tile_packed;
    let partials = parallel::map_collect(tape.tiles_x * tape.tiles_y, |t| {
        let tx = t % tape.tiles_x;
        let ty = t / tape.tiles_x;
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let tw = (w - x0).min(TILE);
        let th = (h - y0).min(TILE);
        let packed = &packed_tiles[t];
        let mut grads = vec![0.0f64; lists[t].len() * IMG_GRAD_W];
        for py in 0..th {
            for px in 0..tw {
                let pixel = (y0 + py) * w + (x0 + px);
                let d_c = [
                    d_image[pixel * 3],
                    d_image[pixel * 3 + 1],
                    d_image[pixel * 3 + 2],
                ];
                if d_c == [0.0; 3] {
                    continue;
                }
                let used = tape.n_used[pixel] as usize;
                if used == 0 {
                    continue;
                }
                let cx = (x0 + px) as f64 + 0.5;
                let cy = (y0 + py) as f64 + 0.5;
                let mut t_run = tape.t_final[pixel];
                let mut suffix = [bg[0] * t_run, bg[1] * t_run, bg[2] * t_run];
                let bin = (py / BIN) * BINS_PER_AXIS + px / BIN;
                for &pos32 in packed.bins[bin].iter().rev() {
                    let pos = pos32 as usize;
                    if pos >= used {
                        continue;
                    }
                    let b = &packed.bounds[pos * BOUNDS..(pos + 1) * BOUNDS];
                    let dx = cx - b[0];
                    let dy = cy - b[1];
                    if dx.abs() > b[2] || dy.abs() > b[2] {
                        continue;
                    }
                    let entry = &packed.attrs[pos * PACKED..(pos + 1) * PACKED];
                    let (ca, cb, cc) = (entry[0], entry[1], entry[2]);
                    let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
                    let g = crate::autodiff::fastmath::fast_exp(-0.5 * q);
                    let alpha_raw = entry[3] * g;
                    let alpha = alpha_raw.min(ALPHA_CLAMP);
                    if alpha < ALPHA_CUTOFF {
                        continue;
                    }
                    let t_before = t_run / (1.0 - alpha);
                    let color = [entry[4], entry[5], entry[6]];
                    let gslot = &mut grads[pos * IMG_GRAD_W..(pos + 1) * IMG_GRAD_W];
                    let mut d_alpha = 0.0;
                    for k in 0..3 {
                        gslot[6 + k] += d_c[k] * alpha * t_before;
                        d_alpha += d_c[k] * (color[k] * t_before - suffix[k] / (1.0 - alpha));
                    }
                    if alpha_raw < ALPHA_CLAMP {
                        // d opacity_act and d conic flow only when unclamped.
                        gslot[5] += d_alpha * g;
                        let dq = -0.5 * d_alpha * alpha_raw;
                        let ddx = dq * (2.0 * ca * dx + 2.0 * cb * dy);
                        let ddy = dq * (2.0 * cb * dx + 2.0 * cc * dy);
                        gslot[0] -= ddx;
                        gslot[1] -= ddy;
                        gslot[2] += dq * dx * dx;
                        gslot[3] += dq * 2.0 * dx * dy;
                        gslot[4] += dq * dy * dy;
                    }
                    for k in 0..3 {
                        suffix[k] += color[k] * alpha * t_before;
                    }
                    t_run = t_before;
                }
            }
        }
        grads
    });

    // Pass 2: fold tile partials into per-point image-space accumulators,
    // in fixed tile order.
    let n = scene.n;
    let mut acc = vec![0.0f64; n * IMG_GRAD_W];
    for (t, grads) in partials.into_iter().enumerate() {
        let list = &lists[t];
        for (pos, &idx) in list.iter().enumerate() {
            let src = &grads[pos * IMG_GRAD_W..(pos + 1) * IMG_GRAD_W];
            let dst = &mut acc[idx as usize * IMG_GRAD_W..(idx as usize + 1) * IMG_GRAD_W];
            for k in 0..IMG_GRAD_W {
                dst[k] += src[k];
            }
        }
    }

    // Pass 3: chain image-space adjoints to raw attributes point by point.
    let cam = &tape.camera;
    let rows = parallel::map_collect(n, |i| {
        let mut out = [0.0f64; 14]; // mean3, quat4, scale3, opacity1, color3
        let a = &acc[i * IMG_GRAD_W..(i + 1) * IMG_GRAD_W];
        // Color and opacity logits chain through the sigmoid regardless of
        // the projection path.
        let o_act = scene.opacity[i];
        out[10] = a[5] * o_act * (1.0 - o_act);
        for k in 0..3 {
            let c_act = scene.color[3 * i + k];
            out[11 + k] = a[6 + k] * c_act * (1.0 - c_act);
        }
        if scene.is_culled(i) || a[..5].iter().all(|&v| v == 0.0) {
            return out;
        }

        let (d_mu, d_conic) = ([a[0], a[1]], [a[2], a[3], a[4]]);
        // conic = inverse of cov2d.
        let (ca, cb, cc) = (
            scene.cov2d[3 * i],
            scene.cov2d[3 * i + 1],
            scene.cov2d[3 * i + 2],
        );
        let det = ca * cc - cb * cb;
        let det2 = det * det;
        let (d_a_conic, d_b_conic, d_c_conic) = (d_conic[0], d_conic[1], d_conic[2]);
        let da = d_a_conic * (-cc * cc / det2)
            + d_b_conic * (cb * cc / det2)
            + d_c_conic * (-cb * cb / det2);
        let db = d_a_conic * (2.0 * cb * cc / det2)
            + d_b_conic * (-1.0 / det - 2.0 * cb * cb / det2)
            + d_c_conic * (2.0 * ca * cb / det2);
        let dc = d_a_conic * (-cb * cb / det2)
            + d_b_conic * (ca * cb / det2)
            + d_c_conic * (-ca * ca / det2);

        // Recompute projection intermediates.
        let mean_w = [
            scene.mean_world[3 * i],
            scene.mean_world[3 * i + 1],
            scene.mean_world[3 * i + 2],
        ];
        let cpt = cam.world_to_camera(&mean_w);
        let z = cpt[2];
        let inv_z = 1.0 / z;
        let inv_z2 = inv_z * inv_z;
        let (fx, fy) = (cam.fx, cam.fy);
        let j = [
            [fx * inv_z, 0.0, -fx * cpt[0] * inv_z2],
            [0.0, fy * inv_z, -fy * cpt[1] * inv_z2],
        ];
        let r_wc = &cam.rotation;
        let mut m = [[0.0f64; 3]; 2];
        for row in 0..2 {
            for col in 0..3 {
                m[row][col] =
                    j[row][0] * r_wc[0][col] + j[row][1] * r_wc[1][col] + j[row][2] * r_wc[2][col];
            }
        }
        let rot = |r: usize, c: usize| scene.rot[9 * i + 3 * r + c];
        let s_act = [
            scene.scale_act[3 * i],
            scene.scale_act[3 * i + 1],
            scene.scale_act[3 * i + 2],
        ];
        let mut sigma = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                sigma[r][c] = rot(r, 0) * s_act[0] * s_act[0] * rot(c, 0)
                    + rot(r, 1) * s_act[1] * s_act[1] * rot(c, 1)
                    + rot(r, 2) * s_act[2] * s_act[2] * rot(c, 2);
            }
        }

        // dM = [[2da, db], [db, 2dc]] * (M Sigma); dSigma = M^T DSig' M.
        let mut msig = [[0.0f64; 3]; 2];
        for row in 0..2 {
            for col in 0..3 {
                msig[row][col] = m[row][0] * sigma[0][col]
                    + m[row][1] * sigma[1][col]
                    + m[row][2] * sigma[2][col];
            }
        }
        let hmat = [[2.0 * da, db], [db, 2.0 * dc]];
        let mut d_m = [[0.0f64; 3]; 2];
        for row in 0..2 {
            for col in 0..3 {
                d_m[row][col] = hmat[row][0] * msig[0][col] + hmat[row][1] * msig[1][col];
            }
        }
        let dsig_p = [[da, 0.5 * db], [0.5 * db, dc]];
        let mut d_sigma = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                d_sigma[r][c] = m[0][r] * dsig_p[0][0] * m[0][c]
                    + m[0][r] * dsig_p[0][1] * m[1][c]
                    + m[1][r] * dsig_p[1][0] * m[0][c]
                    + m[1][r] * dsig_p[1][1] * m[1][c];
            }
        }

        // dJ = dM * R^T, then into the camera-space point.
        let mut d_j = [[0.0f64; 3]; 2];
        for row in 0..2 {
            for col in 0..3 {
                d_j[row][col] = d_m[row][0] * r_wc[col][0]
                    + d_m[row][1] * r_wc[col][1]
                    + d_m[row][2] * r_wc[col][2];
            }
        }
        let mut d_cam = [0.0f64; 3];
        d_cam[0] += d_j[0][2] * (-fx * inv_z2);
        d_cam[1] += d_j[1][2] * (-fy * inv_z2);
        d_cam[2] += d_j[0][0] * (-fx * inv_z2)
            + d_j[0][2] * (2.0 * fx * cpt[0] * inv_z2 * inv_z)
            + d_j[1][1] * (-fy * inv_z2)
            + d_j[1][2] * (2.0 * fy * cpt[1] * inv_z2 * inv_z);
        // Pixel-mean adjoint into the camera-space point.
        d_cam[0] += d_mu[0] * fx * inv_z;
        d_cam[1] += d_mu[1] * fy * inv_z;
        d_cam[2] += d_mu[0] * (-fx * cpt[0] * inv_z2) + d_mu[1] * (-fy * cpt[1] * inv_z2);
        for k in 0..3 {
            out[k] = r_wc[0][k] * d_cam[0] + r_wc[1][k] * d_cam[1] + r_wc[2][k] * d_cam[2];
        }

        // dSigma -> rotation and activated scales via M2 = R diag(s).
        let mut d_m2 = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                // 2 * dSigma * M2, with M2[:,c] = s_c * R[:,c].
                d_m2[r][c] = 2.0
                    * (d_sigma[r][0] * rot(0, c) * s_act[c]
                        + d_sigma[r][1] * rot(1, c) * s_act[c]
                        + d_sigma[r][2] * rot(2, c) * s_act[c]);
            }
        }
        let mut d_rot = [[0.0f64; 3]; 3];
        for c in 0..3 {
            let mut ds = 0.0;
            for r in 0..3 {
                ds += d_m2[r][c] * rot(r, c);
                d_rot[r][c] += d_m2[r][c] * s_act[c];
            }
            // Raw scale: activated = exp(raw) + radius, d act/d raw = exp(raw).
            out[7 + c] = ds * (s_act[c] - scene.rendering_radius);
        }
        let uq = [
            scene.unit_quat[4 * i],
            scene.unit_quat[4 * i + 1],
            scene.unit_quat[4 * i + 2],
            scene.unit_quat[4 * i + 3],
        ];
        let d_uq = quat_to_matrix_backward(&uq, &d_rot);
        let qn = scene.quat_norm[i];
        let dot = uq[0] * d_uq[0] + uq[1] * d_uq[1] + uq[2] * d_uq[2] + uq[3] * d_uq[3];
        for k in 0..4 {
            out[3 + k] = (d_uq[k] - uq[k] * dot) / qn;
        }
        out
    });

    let mut grads = PointGrads::zeros(n);
    for (i, row) in rows.into_iter().enumerate() {
        grads.means[3 * i..3 * i + 3].copy_from_slice(&row[0..3]);
        grads.rotations[4 * i..4 * i + 4].copy_from_slice(&row[3..7]);
        grads.scales[3 * i..3 * i + 3].copy_from_slice(&row[7..10]);
        grads.opacities[i] = row[10];
        grads.colors[3 * i..3 * i + 3].copy_from_slice(&row[11..14]);
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::SpaceTag;
    use crate::splat::oracle::render_oracle;
    use rand::{Rng, SeedableRng};

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

    pub fn random_cloud(rng: &mut impl Rng, n: usize) -> GaussianCloud {
        let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Deformed);
        for _ in 0..n {
            cloud.push(
                [
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(1.2..4.0),
                ],
                std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                std::array::from_fn(|_| rng.random_range(-4.0..-1.5)),
                rng.random_range(-2.0..3.0),
                std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
            );
        }
        cloud
    }

    #[test]
    fn fast_matches_oracle_on_random_scenes() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        for scene_idx in 0..20 {
            let n = rng.random_range(1..120);
            let cloud = random_cloud(&mut rng, n);
            let cam = identity_camera(48, 40, 50.0);
            let bg = [rng.random(), rng.random(), rng.random()];
            let oracle = render_oracle(&cloud, &cam, 0.01, bg);
            let (fast, _) = render_fast(&cloud, &cam, 0.01, bg);
            let max_delta = oracle
                .data
                .iter()
                .zip(fast.data.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_delta < 1e-12, "scene {scene_idx}: max delta {max_delta}");
        }
    }

    #[test]
    fn gaussian_outside_every_tile_contributes_nothing() {
        let cam = identity_camera(32, 32, 40.0);
        let mut cloud = GaussianCloud::with_capacity(1, SpaceTag::Deformed);
        // Projects far outside the image.
        cloud.push([50.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [-3.0; 3], 3.0, [2.0; 3]);
        let bg = [0.3, 0.3, 0.3];
        let (img, tape) = render_fast(&cloud, &cam, 0.0, bg);
        assert!(img.data.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(tape.tile_lists.iter().all(|l| l.is_empty()));
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 30);
        let cam = identity_camera(32, 32, 40.0);
        let (_, tape) = render_fast(&cloud, &cam, 0.01, [0.0; 3]);
        let g = render_backward(&tape, &vec![0.0; 32 * 32 * 3]);
        assert!(g.means.iter().all(|&v| v == 0.0));
        assert!(g.rotations.iter().all(|&v| v == 0.0));
        assert!(g.scales.iter().all(|&v| v == 0.0));
        assert!(g.opacities.iter().all(|&v| v == 0.0));
        assert!(g.colors.iter().all(|&v| v == 0.0));
    }

    /// Scalar objective: weighted sum of all pixels, for FD checks.
    fn objective(cloud: &GaussianCloud, cam: &Camera, bg: [f64; 3], weights: &[f64]) -> f64 {
        let img = render_oracle(cloud, cam, 0.01, bg);
        img.data.iter().zip(weights.iter()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn single_gaussian_opacity_gradient_matches_fd() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let cam = identity_camera(24, 24, 30.0);
        let mut cloud = GaussianCloud::with_capacity(1, SpaceTag::Deformed);
        cloud.push([0.05, -0.1, 2.0], [0.9, 0.1, -0.2, 0.05], [-2.5, -2.2, -2.8], 0.4, [0.5, -0.3, 1.0]);
        let bg = [0.2, 0.5, 0.8];
        let weights: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = render_fast(&cloud, &cam, 0.01, bg);
        let grads = render_backward(&tape, &weights);

        let h = 1e-5;
        let mut up = cloud.clone();
        up.opacities[0] += h;
        let mut dn = cloud.clone();
        dn.opacities[0] -= h;
        let fd = (objective(&up, &cam, bg, &weights) - objective(&dn, &cam, bg, &weights)) / (2.0 * h);
        let rel = (fd - grads.opacities[0]).abs() / fd.abs().max(1e-9);
        assert!(rel < 1e-6, "fd {fd} vs analytic {}", grads.opacities[0]);
    }

    #[test]
    fn full_scene_gradients_match_fd_for_all_attribute_classes() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(31);
        // Opacity logits kept <= 1.2 so transmittance stays far from the
        // early-out threshold and alpha stays off the clamp boundary.
        let n = 6;
        let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Deformed);
        for _ in 0..n {
            cloud.push(
                [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(1.5..3.0),
                ],
                std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                std::array::from_fn(|_| rng.random_range(-2.8..-1.8)),
                rng.random_range(-1.0..1.2),
                std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
            );
        }
        let cam = identity_camera(24, 24, 28.0);
        let bg = [0.1, 0.2, 0.3];
        let weights: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (fast_img, tape) = render_fast(&cloud, &cam, 0.01, bg);
        let oracle_img = render_oracle(&cloud, &cam, 0.01, bg);
        for (a, b) in fast_img.data.iter().zip(oracle_img.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let grads = render_backward(&tape, &weights);

        let h = 1e-5;
        let check = |analytic: f64, perturb: &dyn Fn(&mut GaussianCloud, f64), what: &str| {
            let mut up = cloud.clone();
            perturb(&mut up, h);
            let mut dn = cloud.clone();
            perturb(&mut dn, -h);
            let fd =
                (objective(&up, &cam, bg, &weights) - objective(&dn, &cam, bg, &weights)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            assert!(rel < 1e-4, "{what}: fd {fd} vs analytic {analytic} (rel {rel:.2e})");
        };
        for i in 0..n {
            for k in 0..3 {
                check(grads.means[3 * i + k], &|c, h| c.means[3 * i + k] += h, "mean");
                check(grads.scales[3 * i + k], &|c, h| c.scales[3 * i + k] += h, "scale");
                check(grads.colors[3 * i + k], &|c, h| c.colors[3 * i + k] += h, "color");
            }
            for k in 0..4 {
                check(grads.rotations[4 * i + k], &|c, h| c.rotations[4 * i + k] += h, "quat");
            }
            check(grads.opacities[i], &|c, h| c.opacities[i] += h, "opacity");
        }
    }

    #[test]
    fn transmittance_conservation() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        let cloud = random_cloud(&mut rng, 150);
        let cam = identity_camera(64, 64, 70.0);
        let (_, tape) = render_fast(&cloud, &cam, 0.01, [0.0; 3]);
        // For every pixel: sum of composited alpha weights plus the final
        // transmittance telescopes to exactly 1.
        for pixel in 0..64 * 64 {
            let x = pixel % 64;
            let y = pixel / 64;
            let t = (y / TILE) * tape.tiles_x + x / TILE;
            let list = &tape.tile_lists[t];
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut tr = 1.0;
            let mut alpha_sum = 0.0;
            for pos in 0..tape.n_used[pixel] as usize {
                let i = list[pos] as usize;
                let dx = px - tape.scene.mean2d[2 * i];
                let dy = py - tape.scene.mean2d[2 * i + 1];
                let q = tape.scene.conic[3 * i] * dx * dx
                    + 2.0 * tape.scene.conic[3 * i + 1] * dx * dy
                    + tape.scene.conic[3 * i + 2] * dy * dy;
                let alpha = (tape.scene.opacity[i] * crate::autodiff::fastmath::fast_exp(-0.5 * q)).min(ALPHA_CLAMP);
                if alpha < ALPHA_CUTOFF {
                    continue;
                }
                alpha_sum += alpha * tr;
                tr *= 1.0 - alpha;
            }
            assert!((alpha_sum + tr - 1.0).abs() < 1e-10);
            assert!((tr - tape.t_final[pixel]).abs() < 1e-12);
        }
    }

    #[test]
    fn rendered_values_stay_in_unit_range() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(123);
        let cloud = random_cloud(&mut rng, 80);
        let cam = identity_camera(32, 32, 40.0);
        let (img, _) = render_fast(&cloud, &cam, 0.02, [0.5, 0.0, 1.0]);
        assert!(img.data.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }
}
