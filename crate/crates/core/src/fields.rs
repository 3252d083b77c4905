//! The four learnable fields: Gaussian parameter prediction, canonical
//! offset, blendshape/skinning template, and Gaussian parameter deformation.
//!
//! Every field is a pure function of position(s): repeated evaluation of the
//! same inputs is bitwise identical. Outputs stay pre-activation; offsets
//! from the deformation field are added before any activation so parameters
//! remain in valid domains with unconstrained offsets.

use crate::autodiff::mlp::{
    init_mlp_params, mlp_backward, mlp_forward, LayerActivation, MlpSpec, MlpTape,
};
use crate::autodiff::{AutodiffError, ParameterStore};
use crate::parallel::{self, CHUNK};
use rand::Rng;

/// Constant bias added to the predicted quaternion w component, so a zeroed
/// network falls back to the identity rotation instead of a zero quaternion.
pub const QUAT_W_BIAS: f64 = 1.0;

/// Constant bias on predicted scale logits. Keeps untrained splats near
/// exp(-4) ~ 0.018 world units, so the epoch rendering radius governs the
/// coarse-to-fine size instead of exp(0) = 1 covering the whole frame.
pub const SCALE_BIAS: f64 = -4.0;

/// Constant bias on predicted opacity logits; untrained splats start around
/// 0.2 so early compositing blends many points instead of saturating on the
/// front shell.
pub const OPACITY_BIAS: f64 = -1.3862943611198906;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub encoding_bands: usize,
    /// Canonical offsets saturate at this many world units.
    pub offset_cap: f64,
    pub n_joints: usize,
    pub n_expressions: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            hidden_layers: 3,
            encoding_bands: 0,
            offset_cap: 0.5,
            n_joints: 3,
            n_expressions: 10,
        }
    }
}

impl FieldConfig {
    pub fn pose_feature_dim(&self) -> usize {
        9 * (self.n_joints - 1)
    }

    /// Width of a packed per-point parameter block: quat 4 + scale 3 +
    /// opacity 1 + color 3.
    pub const PARAM_WIDTH: usize = 11;

    pub fn template_out_dim(&self) -> usize {
        self.n_expressions * 3 + self.pose_feature_dim() * 3 + self.n_joints
    }
}

/// Specs for the four nets; parameters live in a `ParameterStore` under the
/// prefixes `predict`, `offset`, `template`, `deform`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBundle {
    pub config: FieldConfig,
    pub predict: MlpSpec,
    pub offset: MlpSpec,
    pub template: MlpSpec,
    pub deform: MlpSpec,
}

impl FieldBundle {
    pub fn new(config: FieldConfig) -> Self {
        let (w, l, enc) = (config.hidden_width, config.hidden_layers, config.encoding_bands);
        // Softplus bodies throughout, except the parameter deformation net
        // which uses ReLU.
        let predict =
            MlpSpec::field_net(3, w, l, FieldConfig::PARAM_WIDTH, LayerActivation::Softplus, enc);
        let offset = MlpSpec::field_net(3, w, l, 3, LayerActivation::Softplus, enc);
        let template = MlpSpec::field_net(
            3,
            w,
            l,
            config.template_out_dim(),
            LayerActivation::Softplus,
            enc,
        );
        let deform =
            MlpSpec::field_net(9, w, l, FieldConfig::PARAM_WIDTH, LayerActivation::Relu, enc);
        Self { config, predict, offset, template, deform }
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) {
        init_mlp_params(store, "predict", &self.predict, rng);
        init_mlp_params(store, "offset", &self.offset, rng);
        init_mlp_params(store, "template", &self.template, rng);
        init_mlp_params(store, "deform", &self.deform, rng);
    }
}

/// Pre-activation canonical parameters for a batch of points, packed rows of
/// [quat 4 | scale 3 | opacity 1 | color 3]. The w bias is already applied.
pub struct CanonicalParams {
    pub packed: Vec<f64>,
    pub n: usize,
}

impl CanonicalParams {
    pub fn quat(&self, i: usize) -> [f64; 4] {
        let o = i * FieldConfig::PARAM_WIDTH;
        [self.packed[o], self.packed[o + 1], self.packed[o + 2], self.packed[o + 3]]
    }
    pub fn scale(&self, i: usize) -> [f64; 3] {
        let o = i * FieldConfig::PARAM_WIDTH + 4;
        [self.packed[o], self.packed[o + 1], self.packed[o + 2]]
    }
    pub fn opacity(&self, i: usize) -> f64 {
        self.packed[i * FieldConfig::PARAM_WIDTH + 7]
    }
    pub fn color(&self, i: usize) -> [f64; 3] {
        let o = i * FieldConfig::PARAM_WIDTH + 8;
        [self.packed[o], self.packed[o + 1], self.packed[o + 2]]
    }
}

/// Gaussian parameter prediction: positions to pre-activation parameters.
pub fn predict_canonical_params(
    store: &ParameterStore,
    bundle: &FieldBundle,
    x_c: &[f64],
    n: usize,
) -> Result<(CanonicalParams, MlpTape), AutodiffError> {
    let (mut packed, tape) = mlp_forward(store, "predict", &bundle.predict, x_c, n)?;
    for i in 0..n {
        let row = &mut packed[i * FieldConfig::PARAM_WIDTH..(i + 1) * FieldConfig::PARAM_WIDTH];
        row[0] += QUAT_W_BIAS;
        for s in &mut row[4..7] {
            *s += SCALE_BIAS;
        }
        row[7] += OPACITY_BIAS;
    }
    Ok((CanonicalParams { packed, n }, tape))
}

/// Adjoint of `predict_canonical_params`; returns d x_c.
pub fn predict_backward(
    store: &mut ParameterStore,
    _bundle: &FieldBundle,
    tape: &MlpTape,
    d_packed: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    // The constant w bias has unit derivative; adjoint passes through.
    mlp_backward(store, "predict", tape, d_packed)
}

pub struct OffsetTape {
    pub mlp: MlpTape,
    /// Raw (pre-cap) offsets, needed for the tanh backward.
    pub raw: Vec<f64>,
}

/// Canonical offset field: x_o = x_c + cap*tanh(raw/cap).
pub fn canonical_offset(
    store: &ParameterStore,
    bundle: &FieldBundle,
    x_c: &[f64],
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>, OffsetTape), AutodiffError> {
    let (raw, mlp) = mlp_forward(store, "offset", &bundle.offset, x_c, n)?;
    let cap = bundle.config.offset_cap;
    let mut offset = vec![0.0; 3 * n];
    let mut x_o = vec![0.0; 3 * n];
    for i in 0..3 * n {
        offset[i] = cap * (raw[i] / cap).tanh();
        x_o[i] = x_c[i] + offset[i];
    }
    Ok((offset, x_o, OffsetTape { mlp, raw }))
}

/// Adjoint of `canonical_offset` w.r.t. the offset output; returns d x_c
/// contribution from the net path only (the identity path x_o = x_c + off is
/// the caller's concern).
pub fn canonical_offset_backward(
    store: &mut ParameterStore,
    bundle: &FieldBundle,
    tape: &OffsetTape,
    d_offset: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    let cap = bundle.config.offset_cap;
    let d_raw: Vec<f64> = tape
        .raw
        .iter()
        .zip(d_offset.iter())
        .map(|(&r, &d)| {
            let t = (r / cap).tanh();
            d * (1.0 - t * t)
        })
        .collect();
    mlp_backward(store, "offset", &tape.mlp, &d_raw)
}

/// Per-point template outputs: expression bases (E x 3), pose-corrective
/// bases (P x 3) and simplex skinning weights.
pub struct TemplateOut {
    pub e_bases: Vec<f64>,
    pub p_bases: Vec<f64>,
    pub skin_weights: Vec<f64>,
    pub n: usize,
}

pub struct TemplateTape {
    pub mlp: MlpTape,
    /// Post-softmax weights, reused by the softmax backward.
    pub skin_weights: Vec<f64>,
}

/// Queries the template field at canonical positions. Skinning logits pass
/// through a row softmax, so weights are always on the probability simplex.
pub fn query_template(
    store: &ParameterStore,
    bundle: &FieldBundle,
    x_o: &[f64],
    n: usize,
) -> Result<(TemplateOut, TemplateTape), AutodiffError> {
    let (raw, mlp) = mlp_forward(store, "template", &bundle.template, x_o, n)?;
    let cfg = &bundle.config;
    let (de, dp, dj) = (cfg.n_expressions * 3, cfg.pose_feature_dim() * 3, cfg.n_joints);
    let width = de + dp + dj;
    let mut e_bases = vec![0.0; n * de];
    let mut p_bases = vec![0.0; n * dp];
    let mut skin = vec![0.0; n * dj];
    parallel::for_each_chunk_mut(&mut skin, CHUNK * dj, |ci, chunk| {
        let base = ci * CHUNK;
        for (local, w_row) in chunk.chunks_mut(dj).enumerate() {
            let row = &raw[(base + local) * width..(base + local + 1) * width];
            let logits = &row[de + dp..];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, &l) in logits.iter().enumerate() {
                w_row[k] = (l - m).exp();
                z += w_row[k];
            }
            for w in w_row.iter_mut() {
                *w /= z;
            }
        }
    });
    for i in 0..n {
        let row = &raw[i * width..(i + 1) * width];
        e_bases[i * de..(i + 1) * de].copy_from_slice(&row[..de]);
        p_bases[i * dp..(i + 1) * dp].copy_from_slice(&row[de..de + dp]);
    }
    Ok((
        TemplateOut { e_bases, p_bases, skin_weights: skin.clone(), n },
        TemplateTape { mlp, skin_weights: skin },
    ))
}

/// Adjoint of `query_template`; returns d x_o.
pub fn query_template_backward(
    store: &mut ParameterStore,
    bundle: &FieldBundle,
    tape: &TemplateTape,
    d_e: &[f64],
    d_p: &[f64],
    d_w: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    let cfg = &bundle.config;
    let (de, dp, dj) = (cfg.n_expressions * 3, cfg.pose_feature_dim() * 3, cfg.n_joints);
    let width = de + dp + dj;
    let n = tape.mlp.batch_len();
    let mut d_raw = vec![0.0; n * width];
    for i in 0..n {
        let row = &mut d_raw[i * width..(i + 1) * width];
        row[..de].copy_from_slice(&d_e[i * de..(i + 1) * de]);
        row[de..de + dp].copy_from_slice(&d_p[i * dp..(i + 1) * dp]);
        let w = &tape.skin_weights[i * dj..(i + 1) * dj];
        let dw = &d_w[i * dj..(i + 1) * dj];
        let dot: f64 = w.iter().zip(dw.iter()).map(|(a, b)| a * b).sum();
        for k in 0..dj {
            row[de + dp + k] = w[k] * (dw[k] - dot);
        }
    }
    mlp_backward(store, "template", &tape.mlp, &d_raw)
}

pub struct DeformInput {
    /// Packed rows [x_c | x_d | offset], n x 9.
    pub packed: Vec<f64>,
}

/// Gaussian parameter deformation field: per-point parameter offsets from
/// (canonical position, deformed position, canonical offset).
pub fn param_deformation(
    store: &ParameterStore,
    bundle: &FieldBundle,
    x_c: &[f64],
    x_d: &[f64],
    offset: &[f64],
    n: usize,
) -> Result<(Vec<f64>, MlpTape, DeformInput), AutodiffError> {
    let mut packed = vec![0.0; n * 9];
    for i in 0..n {
        packed[i * 9..i * 9 + 3].copy_from_slice(&x_c[3 * i..3 * i + 3]);
        packed[i * 9 + 3..i * 9 + 6].copy_from_slice(&x_d[3 * i..3 * i + 3]);
        packed[i * 9 + 6..i * 9 + 9].copy_from_slice(&offset[3 * i..3 * i + 3]);
    }
    let (out, tape) = mlp_forward(store, "deform", &bundle.deform, &packed, n)?;
    Ok((out, tape, DeformInput { packed }))
}

/// Adjoint of `param_deformation`; returns (d x_c, d x_d, d offset).
pub fn param_deformation_backward(
    store: &mut ParameterStore,
    bundle: &FieldBundle,
    tape: &MlpTape,
    d_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), AutodiffError> {
    let _ = bundle;
    let d_packed = mlp_backward(store, "deform", tape, d_out)?;
    let n = tape.batch_len();
    let mut d_xc = vec![0.0; 3 * n];
    let mut d_xd = vec![0.0; 3 * n];
    let mut d_off = vec![0.0; 3 * n];
    for i in 0..n {
        d_xc[3 * i..3 * i + 3].copy_from_slice(&d_packed[i * 9..i * 9 + 3]);
        d_xd[3 * i..3 * i + 3].copy_from_slice(&d_packed[i * 9 + 3..i * 9 + 6]);
        d_off[3 * i..3 * i + 3].copy_from_slice(&d_packed[i * 9 + 6..i * 9 + 9]);
    }
    Ok((d_xc, d_xd, d_off))
}
