//! End-to-end forward and reverse passes: fields -> kinematics -> splatting,
//! with every adjoint routed back to network weights, point positions and
//! per-frame latents.

use crate::autodiff::ParameterStore;
use crate::camera::Camera;
use crate::deform::{deform_cloud, lbs_backward, DeformError, DeformTape};
use crate::fields::{
    canonical_offset_backward, param_deformation_backward, predict_backward,
    query_template_backward, FieldBundle, FieldConfig,
};
use crate::image::Image;
use crate::rig::{PoseExpression, RigDefinition};
use crate::splat::raster::{render_backward, render_fast, RenderTape};

pub struct ForwardPass {
    pub image: Image,
    pub deform: DeformTape,
    pub render: RenderTape,
}

/// Renders the model at one pose through the fast path, keeping every tape.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    store: &ParameterStore,
    bundle: &FieldBundle,
    rig: &RigDefinition,
    x_c: &[f64],
    pose: &PoseExpression,
    camera: &Camera,
    rendering_radius: f64,
    background: [f64; 3],
    ablate_param_deform: bool,
) -> Result<ForwardPass, DeformError> {
    let (cloud, deform) = deform_cloud(x_c, store, bundle, pose, rig, ablate_param_deform)?;
    let (image, render) = render_fast(&cloud, camera, rendering_radius, background);
    Ok(ForwardPass { image, deform, render })
}

/// Extra adjoints injected at intermediate pipeline nodes (template
/// regularization feeds the learned bases directly).
#[derive(Default)]
pub struct ExtraAdjoints {
    pub e_bases: Option<Vec<f64>>,
    pub p_bases: Option<Vec<f64>>,
    pub skin_weights: Option<Vec<f64>>,
}

pub struct BackwardResult {
    /// Gradient w.r.t. the learnable positions, n x 3.
    pub x_c: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Full reverse pass. Accumulates network-weight gradients into `store` and
/// returns position/latent gradients for the caller to route.
pub fn backward(
    store: &mut ParameterStore,
    bundle: &FieldBundle,
    rig: &RigDefinition,
    pose: &PoseExpression,
    fwd: &ForwardPass,
    d_image: &[f64],
    extra: &ExtraAdjoints,
) -> Result<BackwardResult, DeformError> {
    let tape = &fwd.deform;
    let n = tape.x_o.len() / 3;
    const W: usize = FieldConfig::PARAM_WIDTH;

    // Rendered image -> raw deformed attributes.
    let pg = render_backward(&fwd.render, d_image);
    let mut d_params = vec![0.0; n * W];
    for i in 0..n {
        let row = &mut d_params[i * W..(i + 1) * W];
        row[0..4].copy_from_slice(&pg.rotations[4 * i..4 * i + 4]);
        row[4..7].copy_from_slice(&pg.scales[3 * i..3 * i + 3]);
        row[7] = pg.opacities[i];
        row[8..11].copy_from_slice(&pg.colors[3 * i..3 * i + 3]);
    }

    // Deformed parameters split into canonical + offset paths (plain sums).
    let mut d_xc = vec![0.0; 3 * n];
    let mut d_xd = pg.means;
    let mut d_offset = vec![0.0; 3 * n];
    if let Some((mlp_tape, _)) = tape.deform_tape.as_ref() {
        let (dc, dd, doff) = param_deformation_backward(store, bundle, mlp_tape, &d_params)?;
        for i in 0..3 * n {
            d_xc[i] += dc[i];
            d_xd[i] += dd[i];
            d_offset[i] += doff[i];
        }
    }
    let d_xc_predict = predict_backward(store, bundle, &tape.predict_tape, &d_params)?;
    for i in 0..3 * n {
        d_xc[i] += d_xc_predict[i];
    }

    // Kinematics.
    let lbs_grads = lbs_backward(
        &tape.lbs,
        &tape.template_out_e,
        &tape.template_out_p,
        &tape.template_out_w,
        pose,
        rig,
        &d_xd,
    );

    // Template field (with regularization adjoints merged in).
    let merge = |base: Vec<f64>, extra: Option<&Vec<f64>>| -> Vec<f64> {
        match extra {
            None => base,
            Some(e) => base.iter().zip(e.iter()).map(|(a, b)| a + b).collect(),
        }
    };
    let d_e = merge(lbs_grads.e_bases, extra.e_bases.as_ref());
    let d_p = merge(lbs_grads.p_bases, extra.p_bases.as_ref());
    let d_w = merge(lbs_grads.w_skin, extra.skin_weights.as_ref());
    let d_xo_template = query_template_backward(store, bundle, &tape.template_tape, &d_e, &d_p, &d_w)?;

    // x_o = x_c + offset: both paths receive the full x_o adjoint.
    let mut d_xo = lbs_grads.x_o;
    for i in 0..3 * n {
        d_xo[i] += d_xo_template[i];
        d_xc[i] += d_xo[i];
        d_offset[i] += d_xo[i];
    }
    let d_xc_offset = canonical_offset_backward(store, bundle, &tape.offset_tape, &d_offset)?;
    for i in 0..3 * n {
        d_xc[i] += d_xc_offset[i];
    }

    Ok(BackwardResult { x_c: d_xc, theta: lbs_grads.theta, psi: lbs_grads.psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::rel_error;
    use crate::fields::FieldConfig;
    use crate::rig::RigDefinition;
    use rand::{Rng, SeedableRng};

    fn setup() -> (ParameterStore, FieldBundle, RigDefinition, Vec<f64>, PoseExpression, Camera) {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        let bundle = FieldBundle::new(FieldConfig {
            hidden_width: 8,
            hidden_layers: 1,
            encoding_bands: 0,
            offset_cap: 0.5,
            n_joints: 3,
            n_expressions: 4,
        });
        let mut store = ParameterStore::new();
        bundle.init_params(&mut store, &mut rng);
        let rig = RigDefinition {
            n_joints: 3,
            parents: vec![-1, 0, 0],
            rest_joints: vec![0.0, -0.1, 0.0, 0.02, -0.15, 0.1, -0.08, 0.1, 0.15],
            n_expressions: 4,
            joint_regressor: (0..36).map(|_| rng.random_range(-0.02..0.02)).collect(),
        };
        let n = 12;
        let x_c: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let pose = PoseExpression {
            theta: (0..9).map(|_| rng.random_range(-0.3..0.3)).collect(),
            psi: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let camera = Camera::look_at(
            40.0,
            40.0,
            32,
            32,
            [0.1, 0.2, -1.8],
            [0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            0.05,
            10.0,
        )
        .unwrap();
        (store, bundle, rig, x_c, pose, camera)
    }

    fn pixel_objective(
        store: &ParameterStore,
        bundle: &FieldBundle,
        rig: &RigDefinition,
        x_c: &[f64],
        pose: &PoseExpression,
        camera: &Camera,
        weights: &[f64],
    ) -> f64 {
        let fwd = forward(store, bundle, rig, x_c, pose, camera, 0.02, [0.3; 3], false).unwrap();
        fwd.image.data.iter().zip(weights.iter()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let (store, bundle, rig, x_c, pose, camera) = setup();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(78);
        let weights: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();

        let fwd = forward(&store, &bundle, &rig, &x_c, &pose, &camera, 0.02, [0.3; 3], false).unwrap();
        let mut store_mut = store.clone();
        let result = backward(
            &mut store_mut,
            &bundle,
            &rig,
            &pose,
            &fwd,
            &weights,
            &ExtraAdjoints::default(),
        )
        .unwrap();

        let h = 1e-5;
        // Positions.
        for &i in &[0usize, 7, 20, 35] {
            let mut up = x_c.clone();
            up[i] += h;
            let mut dn = x_c.clone();
            dn[i] -= h;
            let fd = (pixel_objective(&store, &bundle, &rig, &up, &pose, &camera, &weights)
                - pixel_objective(&store, &bundle, &rig, &dn, &pose, &camera, &weights))
                / (2.0 * h);
            let rel = rel_error(result.x_c[i], fd);
            assert!(rel < 1e-4, "x_c[{i}]: analytic {} fd {fd} rel {rel:.2e}", result.x_c[i]);
        }
        // Pose.
        for i in 0..pose.theta.len() {
            let mut up = pose.clone();
            up.theta[i] += h;
            let mut dn = pose.clone();
            dn.theta[i] -= h;
            let fd = (pixel_objective(&store, &bundle, &rig, &x_c, &up, &camera, &weights)
                - pixel_objective(&store, &bundle, &rig, &x_c, &dn, &camera, &weights))
                / (2.0 * h);
            let rel = rel_error(result.theta[i], fd);
            assert!(
                rel < 1e-4 || (fd.abs() < 1e-9 && result.theta[i].abs() < 1e-9),
                "theta[{i}]: analytic {} fd {fd}",
                result.theta[i]
            );
        }
        // Expression.
        for i in 0..pose.psi.len() {
            let mut up = pose.clone();
            up.psi[i] += h;
            let mut dn = pose.clone();
            dn.psi[i] -= h;
            let fd = (pixel_objective(&store, &bundle, &rig, &x_c, &up, &camera, &weights)
                - pixel_objective(&store, &bundle, &rig, &x_c, &dn, &camera, &weights))
                / (2.0 * h);
            let rel = rel_error(result.psi[i], fd);
            assert!(rel < 1e-4, "psi[{i}]: analytic {} fd {fd}", result.psi[i]);
        }
        // A sample of weights from each network.
        for name in ["predict.l1.v", "offset.l0.v", "template.l1.b", "deform.l0.g"] {
            let len = store.value(name).len();
            for &i in &[0usize, len / 2, len - 1] {
                let mut up = store.clone();
                up.get_mut(name).unwrap().value[i] += h;
                let mut dn = store.clone();
                dn.get_mut(name).unwrap().value[i] -= h;
                let fd = (pixel_objective(&up, &bundle, &rig, &x_c, &pose, &camera, &weights)
                    - pixel_objective(&dn, &bundle, &rig, &x_c, &pose, &camera, &weights))
                    / (2.0 * h);
                let analytic = store_mut.get(name).unwrap().grad[i];
                let rel = rel_error(analytic, fd);
                assert!(
                    rel < 1e-4 || (fd.abs() < 1e-8 && analytic.abs() < 1e-8),
                    "{name}[{i}]: analytic {analytic} fd {fd} rel {rel:.2e}"
                );
            }
        }
    }

    #[test]
    fn ablated_pipeline_runs_and_ignores_deform_net() {
        let (store, bundle, rig, x_c, pose, camera) = setup();
        let fwd = forward(&store, &bundle, &rig, &x_c, &pose, &camera, 0.02, [0.3; 3], true).unwrap();
        assert!(fwd.deform.deform_tape.is_none());
        // Deformed parameters equal canonical parameters under ablation: the
        // projected unit quaternion matches the normalized canonical one.
        let n = x_c.len() / 3;
        for i in 0..n {
            let (uq, _) =
                crate::rotation::normalize_quaternion(&fwd.deform.canonical.quat(i)).unwrap();
            for k in 0..4 {
                assert_eq!(uq[k], fwd.render.scene.unit_quat[4 * i + k]);
            }
        }
        let mut store_mut = store.clone();
        let d_image = vec![0.5; 32 * 32 * 3];
        let res = backward(
            &mut store_mut,
            &bundle,
            &rig,
            &pose,
            &fwd,
            &d_image,
            &ExtraAdjoints::default(),
        )
        .unwrap();
        assert_eq!(res.x_c.len(), x_c.len());
        // Deform-net gradients stay zero under ablation.
        for name in store_mut.names().map(|s| s.to_string()).collect::<Vec<_>>() {
            if name.starts_with("deform.") {
                assert!(store_mut.get(&name).unwrap().grad.iter().all(|&g| g == 0.0));
            }
        }
    }
}
