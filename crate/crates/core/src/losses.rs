//! Training loss stack: pixel L1, D-SSIM, template regularization against
//! nearest-vertex pseudo ground truth, pluggable perceptual term, weighted
//! total. Every term returns its gradient alongside the value.

use crate::image::Image;
use crate::nearest::NearestGrid;
use crate::perceptual::FeatureExtractor;
use crate::ssim::{dssim_with_grad, SsimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("image shapes differ")]
    ShapeMismatch,
    #[error(transparent)]
    Ssim(#[from] SsimError),
}

/// Weights of the total objective. All nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rgb: f64,
    pub dssim: f64,
    pub flame: f64,
    pub vgg: f64,
    pub flame_e: f64,
    pub flame_p: f64,
    pub flame_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            dssim: 0.25,
            flame: 1.0,
            vgg: 0.1,
            flame_e: 1000.0,
            flame_p: 1000.0,
            flame_w: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.rgb, self.dssim, self.flame, self.vgg, self.flame_e, self.flame_p, self.flame_w,
        ];
        if all.iter().any(|&w| !(w >= 0.0)) {
            return Err("loss weights must be nonnegative".into());
        }
        Ok(())
    }
}

/// Mean absolute error over pixels and channels, with gradient w.r.t. `c`.
pub fn rgb_loss_with_grad(
    c: &Image,
    c_gt: &Image,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), LossError> {
    if c.width != c_gt.width || c.height != c_gt.height {
        return Err(LossError::ShapeMismatch);
    }
    let n = c.data.len() as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { Some(vec![0.0; c.data.len()]) } else { None };
    for i in 0..c.data.len() {
        let d = c.data[i] - c_gt.data[i];
        total += d.abs();
        if let Some(g) = grad.as_mut() {
            g[i] = d.signum() / n;
        }
    }
    Ok((total / n, grad))
}

/// Per-point pseudo ground truth bases copied from the nearest template
/// vertex in canonical space.
#[derive(Debug, Clone)]
pub struct PseudoGroundTruth {
    pub e_bases: Vec<f64>,
    pub p_bases: Vec<f64>,
    pub skin_weights: Vec<f64>,
    pub nearest_vertex: Vec<usize>,
}

/// Template vertex bank: positions plus per-vertex deformation bases, the
/// source of pseudo ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    pub n_vertices: usize,
    pub n_expressions: usize,
    pub pose_dim: usize,
    pub n_joints: usize,
    pub positions: Vec<f64>,
    pub e_bases: Vec<f64>,
    pub p_bases: Vec<f64>,
    pub skin_weights: Vec<f64>,
}

/// Assigns each canonical point the bases of its nearest template vertex.
pub fn pseudo_ground_truth(bank: &TemplateBank, x_o: &[f64]) -> PseudoGroundTruth {
    let n = x_o.len() / 3;
    let grid = NearestGrid::build(&bank.positions);
    let de = bank.n_expressions * 3;
    let dp = bank.pose_dim * 3;
    let dj = bank.n_joints;
    let rows = crate::parallel::map_collect(n, |i| {
        grid.nearest(&[x_o[3 * i], x_o[3 * i + 1], x_o[3 * i + 2]])
    });
    let mut out = PseudoGroundTruth {
        e_bases: vec![0.0; n * de],
        p_bases: vec![0.0; n * dp],
        skin_weights: vec![0.0; n * dj],
        nearest_vertex: rows.clone(),
    };
    for (i, &v) in rows.iter().enumerate() {
        out.e_bases[i * de..(i + 1) * de].copy_from_slice(&bank.e_bases[v * de..(v + 1) * de]);
        out.p_bases[i * dp..(i + 1) * dp].copy_from_slice(&bank.p_bases[v * dp..(v + 1) * dp]);
        out.skin_weights[i * dj..(i + 1) * dj]
            .copy_from_slice(&bank.skin_weights[v * dj..(v + 1) * dj]);
    }
    out
}

/// Gradients of the template regularization w.r.t. the learned bases.
pub struct FlameRegGrads {
    pub e_bases: Vec<f64>,
    pub p_bases: Vec<f64>,
    pub skin_weights: Vec<f64>,
}

/// Mean over points of weighted L2 norms of flattened per-point differences
/// between learned and pseudo bases.
pub fn flame_reg_loss_with_grad(
    learned_e: &[f64],
    learned_p: &[f64],
    learned_w: &[f64],
    pseudo: &PseudoGroundTruth,
    weights: &LossWeights,
    want_grad: bool,
) -> (f64, Option<FlameRegGrads>) {
    let n = pseudo.nearest_vertex.len();
    if n == 0 {
        return (0.0, None);
    }
    let mut grads = if want_grad {
        Some(FlameRegGrads {
            e_bases: vec![0.0; learned_e.len()],
            p_bases: vec![0.0; learned_p.len()],
            skin_weights: vec![0.0; learned_w.len()],
        })
    } else {
        None
    };
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut term = |learned: &[f64], pseudo: &[f64], lambda: f64, grad: Option<&mut Vec<f64>>| {
        let width = learned.len() / n;
        if width == 0 || lambda == 0.0 {
            return;
        }
        let mut acc = 0.0;
        let mut gbuf = grad;
        for i in 0..n {
            let a = &learned[i * width..(i + 1) * width];
            let b = &pseudo[i * width..(i + 1) * width];
            let norm: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            acc += lambda * norm;
            if let Some(g) = gbuf.as_mut() {
                if norm > 1e-12 {
                    let scale = lambda * inv_n / norm;
                    for k in 0..width {
                        g[i * width + k] += scale * (a[k] - b[k]);
                    }
                }
            }
        }
        total += acc * inv_n;
    };
    match grads.as_mut() {
        Some(g) => {
            term(learned_e, &pseudo.e_bases, weights.flame_e, Some(&mut g.e_bases));
            term(learned_p, &pseudo.p_bases, weights.flame_p, Some(&mut g.p_bases));
            term(learned_w, &pseudo.skin_weights, weights.flame_w, Some(&mut g.skin_weights));
        }
        None => {
            term(learned_e, &pseudo.e_bases, weights.flame_e, None);
            term(learned_p, &pseudo.p_bases, weights.flame_p, None);
            term(learned_w, &pseudo.skin_weights, weights.flame_w, None);
        }
    }
    (total, grads)
}

/// L1 distance between extractor feature stacks. Returns the image gradient
/// w.r.t. `c`. Without an extractor the term is zero (callers log the
/// warning once).
pub fn perceptual_loss_with_grad(
    c: &Image,
    c_gt: &Image,
    extractor: Option<&dyn FeatureExtractor>,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let Some(ext) = extractor else {
        eprintln!("warning: perceptual loss has no feature extractor configured; term contributes 0");
        return (0.0, if want_grad { Some(vec![0.0; c.data.len()]) } else { None });
    };
    let fa = ext.features(c);
    let fb = ext.features(c_gt);
    let n_stages = fa.len().max(1);
    let mut total = 0.0;
    let mut d_feats = Vec::with_capacity(fa.len());
    for (a, b) in fa.iter().zip(fb.iter()) {
        let len = a.data.len() as f64;
        let scale = 1.0 / (len * n_stages as f64);
        let mut s = 0.0;
        let mut d = vec![0.0; a.data.len()];
        for i in 0..a.data.len() {
            let diff = a.data[i] - b.data[i];
            s += diff.abs();
            d[i] = diff.signum() * scale;
        }
        total += s / len;
        d_feats.push(crate::perceptual::FeatureMap {
            channels: a.channels,
            width: a.width,
            height: a.height,
            data: d,
        });
    }
    total /= n_stages as f64;
    let grad = want_grad.then(|| ext.backward(c, &d_feats));
    (total, grad)
}

/// Individual loss values prior to weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub rgb: f64,
    pub dssim: f64,
    pub flame: f64,
    pub vgg: f64,
}

/// Weighted total; `flame_multiplier` carries the epoch decay of the
/// regularization weight.
pub fn total_loss(parts: &LossParts, weights: &LossWeights, flame_multiplier: f64) -> f64 {
    weights.rgb * parts.rgb
        + weights.dssim * parts.dssim
        + weights.flame * flame_multiplier * parts.flame
        + weights.vgg * parts.vgg
}

/// D-SSIM re-export at the loss level.
pub fn dssim_loss_with_grad(
    c: &Image,
    c_gt: &Image,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), LossError> {
    Ok(dssim_with_grad(c, c_gt, want_grad)?)
}
