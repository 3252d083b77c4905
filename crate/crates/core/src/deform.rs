//! Canonical-to-deformed kinematics: expression/pose blendshape displacement
//! followed by linear blend skinning over the joint tree, plus the composed
//! cloud deformation used by the trainer.
//!
//! Only the mean position is skinned; every other attribute change comes from
//! the parameter deformation field added pre-activation, so the deformation
//! field alone is responsible for orientation and appearance adjustments.

use crate::cloud::{GaussianCloud, SpaceTag};
use crate::fields::{
    canonical_offset, param_deformation, predict_canonical_params, query_template,
    CanonicalParams, FieldBundle, FieldConfig,
};
use crate::autodiff::mlp::MlpTape;
use crate::autodiff::{AutodiffError, ParameterStore};
use crate::fields::{DeformInput, OffsetTape, TemplateTape};
use crate::parallel::{self, CHUNK};
use crate::rig::{
    forward_kinematics, forward_kinematics_backward, JointTransforms, PoseExpression,
    RigDefinition, RigError,
};
use crate::rotation::{axis_angle_to_matrix, axis_angle_to_matrix_backward, Mat3, Vec3};

/// Flattened (R(theta_j) - I) for every non-root joint, row-major.
pub fn pose_features(rig: &RigDefinition, theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rig.pose_feature_dim());
    for j in 1..rig.n_joints {
        let r = axis_angle_to_matrix(&[theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]]);
        for row in 0..3 {
            for col in 0..3 {
                let eye = if row == col { 1.0 } else { 0.0 };
                out.push(r[row][col] - eye);
            }
        }
    }
    out
}

/// Adjoint of `pose_features` into theta.
pub fn pose_features_backward(
    rig: &RigDefinition,
    theta: &[f64],
    d_features: &[f64],
    d_theta: &mut [f64],
) {
    for j in 1..rig.n_joints {
        let mut d_r = [[0.0; 3]; 3];
        let base = (j - 1) * 9;
        for row in 0..3 {
            for col in 0..3 {
                d_r[row][col] = d_features[base + 3 * row + col];
            }
        }
        let aa = [theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]];
        let daa = axis_angle_to_matrix_backward(&aa, &d_r);
        for k in 0..3 {
            d_theta[3 * j + k] += daa[k];
        }
    }
}

/// Everything the backward pass needs from one skinning forward.
pub struct LbsTape {
    pub joints: Vec<f64>,
    pub fk: JointTransforms,
    pub features: Vec<f64>,
    /// Shaped positions x_o + B_P + B_E, n x 3.
    pub x_shaped: Vec<f64>,
}

/// Skins shaped canonical points into the deformed space:
/// x_d = LBS(x_o + B_P(theta) + B_E(psi), J(psi), theta, W).
///
/// `e_bases` is n x (E*3), `p_bases` n x (P*3), `w_skin` n x n_joints.
#[allow(clippy::too_many_arguments)]
pub fn lbs_transform(
    x_o: &[f64],
    e_bases: &[f64],
    p_bases: &[f64],
    w_skin: &[f64],
    pose: &PoseExpression,
    rig: &RigDefinition,
) -> Result<(Vec<f64>, LbsTape), RigError> {
    pose.validate(rig)?;
    let n = x_o.len() / 3;
    let ne = rig.n_expressions;
    let np = rig.pose_feature_dim();
    let nj = rig.n_joints;
    if e_bases.len() != n * ne * 3 || p_bases.len() != n * np * 3 || w_skin.len() != n * nj {
        return Err(RigError::BadLength {
            what: "per-point bases/weights",
            got: e_bases.len(),
            expected: n * ne * 3,
        });
    }
    let joints = rig.joint_locations(&pose.psi)?;
    let fk = forward_kinematics(rig, &pose.theta, &joints);
    let features = pose_features(rig, &pose.theta);

    let mut x_shaped = vec![0.0; 3 * n];
    let mut x_d = vec![0.0; 3 * n];
    let psi = &pose.psi;
    {
        let fk_ref = &fk;
        let joints_ref = &joints;
        let feats = &features;
        let shaped_chunks: Vec<(Vec<f64>, Vec<f64>)> = parallel::map_collect(
            parallel::n_chunks(n, CHUNK),
            |ci| {
                let lo = ci * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut shaped = vec![0.0; (hi - lo) * 3];
                let mut deformed = vec![0.0; (hi - lo) * 3];
                for i in lo..hi {
                    let mut p = [x_o[3 * i], x_o[3 * i + 1], x_o[3 * i + 2]];
                    for e in 0..ne {
                        let b = &e_bases[(i * ne + e) * 3..(i * ne + e) * 3 + 3];
                        for k in 0..3 {
                            p[k] += psi[e] * b[k];
                        }
                    }
                    for f in 0..np {
                        let b = &p_bases[(i * np + f) * 3..(i * np + f) * 3 + 3];
                        for k in 0..3 {
                            p[k] += feats[f] * b[k];
                        }
                    }
                    shaped[(i - lo) * 3..(i - lo) * 3 + 3].copy_from_slice(&p);
                    let mut out = [0.0; 3];
                    for j in 0..nj {
                        let w = w_skin[i * nj + j];
                        if w == 0.0 {
                            continue;
                        }
                        let jl = [joints_ref[3 * j], joints_ref[3 * j + 1], joints_ref[3 * j + 2]];
                        let rel = [p[0] - jl[0], p[1] - jl[1], p[2] - jl[2]];
                        let r = &fk_ref.global_rot[j];
                        let t = &fk_ref.global_trans[j];
                        for row in 0..3 {
                            out[row] += w
                                * (r[row][0] * rel[0]
                                    + r[row][1] * rel[1]
                                    + r[row][2] * rel[2]
                                    + t[row]);
                        }
                    }
                    deformed[(i - lo) * 3..(i - lo) * 3 + 3].copy_from_slice(&out);
                }
                (shaped, deformed)
            },
        );
        for (ci, (shaped, deformed)) in shaped_chunks.into_iter().enumerate() {
            let lo = ci * CHUNK * 3;
            x_shaped[lo..lo + shaped.len()].copy_from_slice(&shaped);
            x_d[lo..lo + deformed.len()].copy_from_slice(&deformed);
        }
    }
    Ok((x_d, LbsTape { joints, fk, features, x_shaped }))
}

/// Adjoints of `lbs_transform` for every input.
pub struct LbsGrads {
    pub x_o: Vec<f64>,
    pub e_bases: Vec<f64>,
    pub p_bases: Vec<f64>,
    pub w_skin: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn lbs_backward(
    tape: &LbsTape,
    e_bases: &[f64],
    p_bases: &[f64],
    w_skin: &[f64],
    pose: &PoseExpression,
    rig: &RigDefinition,
    d_xd: &[f64],
) -> LbsGrads {
    let n = d_xd.len() / 3;
    let ne = rig.n_expressions;
    let np = rig.pose_feature_dim();
    let nj = rig.n_joints;
    let psi = &pose.psi;
    let feats = &tape.features;
    let joints = &tape.joints;
    let fk = &tape.fk;

    struct Partial {
        d_xo: Vec<f64>,
        d_e: Vec<f64>,
        d_p: Vec<f64>,
        d_w: Vec<f64>,
        d_rot: Vec<Mat3>,
        d_trans: Vec<Vec3>,
        d_joints: Vec<f64>,
        d_feat: Vec<f64>,
        d_psi: Vec<f64>,
    }

    let nc = parallel::n_chunks(n, CHUNK);
    let partials: Vec<Partial> = parallel::map_collect(nc, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let m = hi - lo;
        let mut part = Partial {
            d_xo: vec![0.0; m * 3],
            d_e: vec![0.0; m * ne * 3],
            d_p: vec![0.0; m * np * 3],
            d_w: vec![0.0; m * nj],
            d_rot: vec![[[0.0; 3]; 3]; nj],
            d_trans: vec![[0.0; 3]; nj],
            d_joints: vec![0.0; nj * 3],
            d_feat: vec![0.0; np],
            d_psi: vec![0.0; ne],
        };
        for i in lo..hi {
            let dy = [d_xd[3 * i], d_xd[3 * i + 1], d_xd[3 * i + 2]];
            let p = [
                tape.x_shaped[3 * i],
                tape.x_shaped[3 * i + 1],
                tape.x_shaped[3 * i + 2],
            ];
            let mut d_shaped = [0.0f64; 3];
            for j in 0..nj {
                let w = w_skin[i * nj + j];
                let jl = [joints[3 * j], joints[3 * j + 1], joints[3 * j + 2]];
                let rel = [p[0] - jl[0], p[1] - jl[1], p[2] - jl[2]];
                let r = &fk.global_rot[j];
                let t = &fk.global_trans[j];
                // d w_j = dy . (R (p - J_j) + t)
                let mut y_j = [0.0f64; 3];
                for row in 0..3 {
                    y_j[row] =
                        r[row][0] * rel[0] + r[row][1] * rel[1] + r[row][2] * rel[2] + t[row];
                }
                part.d_w[(i - lo) * nj + j] += dy[0] * y_j[0] + dy[1] * y_j[1] + dy[2] * y_j[2];
                if w == 0.0 {
                    continue;
                }
                // d R += w dy rel^T ; d t += w dy ; d rel = w R^T dy
                for row in 0..3 {
                    for col in 0..3 {
                        part.d_rot[j][row][col] += w * dy[row] * rel[col];
                    }
                    part.d_trans[j][row] += w * dy[row];
                }
                let mut d_rel = [0.0f64; 3];
                for col in 0..3 {
                    d_rel[col] = w * (r[0][col] * dy[0] + r[1][col] * dy[1] + r[2][col] * dy[2]);
                }
                for k in 0..3 {
                    d_shaped[k] += d_rel[k];
                    part.d_joints[3 * j + k] -= d_rel[k];
                }
            }
            // Shaped point: x_o + sum psi_e E_e + sum feat_f P_f.
            for k in 0..3 {
                part.d_xo[(i - lo) * 3 + k] = d_shaped[k];
            }
            for e in 0..ne {
                let b = &e_bases[(i * ne + e) * 3..(i * ne + e) * 3 + 3];
                let dst = &mut part.d_e[((i - lo) * ne + e) * 3..((i - lo) * ne + e) * 3 + 3];
                for k in 0..3 {
                    dst[k] += psi[e] * d_shaped[k];
                    part.d_psi[e] += b[k] * d_shaped[k];
                }
            }
            for f in 0..np {
                let b = &p_bases[(i * np + f) * 3..(i * np + f) * 3 + 3];
                let dst = &mut part.d_p[((i - lo) * np + f) * 3..((i - lo) * np + f) * 3 + 3];
                for k in 0..3 {
                    dst[k] += feats[f] * d_shaped[k];
                    part.d_feat[f] += b[k] * d_shaped[k];
                }
            }
        }
        part
    });

    let mut grads = LbsGrads {
        x_o: vec![0.0; n * 3],
        e_bases: vec![0.0; n * ne * 3],
        p_bases: vec![0.0; n * np * 3],
        w_skin: vec![0.0; n * nj],
        theta: vec![0.0; nj * 3],
        psi: vec![0.0; ne],
    };
    let mut d_rot = vec![[[0.0; 3]; 3]; nj];
    let mut d_trans = vec![[0.0; 3]; nj];
    let mut d_joints = vec![0.0; nj * 3];
    let mut d_feat = vec![0.0; np];
    for (ci, part) in partials.into_iter().enumerate() {
        let lo3 = ci * CHUNK * 3;
        grads.x_o[lo3..lo3 + part.d_xo.len()].copy_from_slice(&part.d_xo);
        let loe = ci * CHUNK * ne * 3;
        grads.e_bases[loe..loe + part.d_e.len()].copy_from_slice(&part.d_e);
        let lop = ci * CHUNK * np * 3;
        grads.p_bases[lop..lop + part.d_p.len()].copy_from_slice(&part.d_p);
        let low = ci * CHUNK * nj;
        grads.w_skin[low..low + part.d_w.len()].copy_from_slice(&part.d_w);
        for j in 0..nj {
            for r in 0..3 {
                for c in 0..3 {
                    d_rot[j][r][c] += part.d_rot[j][r][c];
                }
                d_trans[j][r] += part.d_trans[j][r];
            }
        }
        for k in 0..nj * 3 {
            d_joints[k] += part.d_joints[k];
        }
        for f in 0..np {
            d_feat[f] += part.d_feat[f];
        }
        for e in 0..ne {
            grads.psi[e] += part.d_psi[e];
        }
    }

    // Pose features feed theta directly.
    pose_features_backward(rig, &pose.theta, &d_feat, &mut grads.theta);
    // FK transforms feed theta and the expression-adjusted joints.
    forward_kinematics_backward(
        rig,
        &pose.theta,
        joints,
        fk,
        d_rot,
        d_trans,
        &mut grads.theta,
        &mut d_joints,
    );
    // Joints respond linearly to psi through the regressor.
    rig.joint_locations_backward(&d_joints, &mut grads.psi);
    grads
}

/// Tape of the full field-driven deformation of a cloud.
pub struct DeformTape {
    pub x_o: Vec<f64>,
    pub offset: Vec<f64>,
    pub offset_tape: OffsetTape,
    pub template_out_e: Vec<f64>,
    pub template_out_p: Vec<f64>,
    pub template_out_w: Vec<f64>,
    pub template_tape: TemplateTape,
    pub lbs: LbsTape,
    pub deform_tape: Option<(MlpTape, DeformInput)>,
    pub canonical: CanonicalParams,
    pub predict_tape: MlpTape,
}

/// Applies offsets of the deformation field to canonical parameters in
/// pre-activation space. With a zeroed deformation net the deformed
/// parameters equal the canonical parameters exactly.
fn add_param_offsets(canonical: &CanonicalParams, offsets: Option<&[f64]>, n: usize) -> Vec<f64> {
    match offsets {
        None => canonical.packed.clone(),
        Some(off) => {
            let mut out = canonical.packed.clone();
            for (o, d) in out.iter_mut().zip(off.iter()) {
                *o += d;
            }
            let _ = n;
            out
        }
    }
}

/// Field-driven deformation of learnable positions into a deformed cloud.
///
/// `x_c` are the optimizer-owned positions (initialized space); all other
/// attributes come from the fields. With `ablate_param_deform` the parameter
/// deformation field is skipped (static parameters).
pub fn deform_cloud(
    x_c: &[f64],
    store: &ParameterStore,
    bundle: &FieldBundle,
    pose: &PoseExpression,
    rig: &RigDefinition,
    ablate_param_deform: bool,
) -> Result<(GaussianCloud, DeformTape), DeformError> {
    let n = x_c.len() / 3;
    let (canonical, predict_tape) = predict_canonical_params(store, bundle, x_c, n)?;
    let (offset, x_o, offset_tape) = canonical_offset(store, bundle, x_c, n)?;
    let (template, template_tape) = query_template(store, bundle, &x_o, n)?;
    let (x_d, lbs) = lbs_transform(
        &x_o,
        &template.e_bases,
        &template.p_bases,
        &template.skin_weights,
        pose,
        rig,
    )?;
    let (packed, deform_tape) = if ablate_param_deform {
        (add_param_offsets(&canonical, None, n), None)
    } else {
        let (offsets, tape, input) = param_deformation(store, bundle, x_c, &x_d, &offset, n)?;
        (add_param_offsets(&canonical, Some(&offsets), n), Some((tape, input)))
    };

    let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Deformed);
    const W: usize = FieldConfig::PARAM_WIDTH;
    for i in 0..n {
        let row = &packed[i * W..(i + 1) * W];
        cloud.push(
            [x_d[3 * i], x_d[3 * i + 1], x_d[3 * i + 2]],
            [row[0], row[1], row[2], row[3]],
            [row[4], row[5], row[6]],
            row[7],
            [row[8], row[9], row[10]],
        );
    }
    Ok((
        cloud,
        DeformTape {
            x_o,
            offset,
            offset_tape,
            template_out_e: template.e_bases,
            template_out_p: template.p_bases,
            template_out_w: template.skin_weights,
            template_tape,
            lbs,
            deform_tape,
            canonical,
            predict_tape,
        },
    ))
}

#[derive(Debug, thiserror::Error)]
pub enum DeformError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Rig(#[from] RigError),
}
