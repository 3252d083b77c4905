//! Joint-tree rig: rest joints, expression-driven joint regressor, forward
//! kinematics, and a human-readable text serialization so tests can pin rigs.

use crate::rotation::{
    axis_angle_to_matrix, axis_angle_to_matrix_backward, mat3_mul, mat3_mul_vec, mat3_transpose,
    Mat3, Vec3,
};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("joint parents must form a rooted tree sorted parent-before-child")]
    BadTree,
    #[error("{what} length {got}, expected {expected}")]
    BadLength { what: &'static str, got: usize, expected: usize },
    #[error("rig file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-frame animation coefficients: one axis-angle triple per joint plus an
/// expression vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseExpression {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl PoseExpression {
    pub fn rest(n_joints: usize, n_expressions: usize) -> Self {
        Self { theta: vec![0.0; n_joints * 3], psi: vec![0.0; n_expressions] }
    }

    pub fn validate(&self, rig: &RigDefinition) -> Result<(), RigError> {
        if self.theta.len() != rig.n_joints * 3 {
            return Err(RigError::BadLength {
                what: "theta",
                got: self.theta.len(),
                expected: rig.n_joints * 3,
            });
        }
        if self.psi.len() != rig.n_expressions {
            return Err(RigError::BadLength {
                what: "psi",
                got: self.psi.len(),
                expected: rig.n_expressions,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigDefinition {
    pub n_joints: usize,
    /// Parent index per joint, -1 for the root; sorted parent-before-child.
    pub parents: Vec<i32>,
    /// n_joints x 3 rest locations.
    pub rest_joints: Vec<f64>,
    pub n_expressions: usize,
    /// (n_joints*3) x n_expressions linear response of joint locations to psi.
    pub joint_regressor: Vec<f64>,
}

impl RigDefinition {
    pub fn validate(&self) -> Result<(), RigError> {
        if self.parents.len() != self.n_joints || self.n_joints == 0 {
            return Err(RigError::BadTree);
        }
        if self.parents[0] != -1 {
            return Err(RigError::BadTree);
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(RigError::BadTree);
            }
        }
        if self.rest_joints.len() != self.n_joints * 3 {
            return Err(RigError::BadLength {
                what: "rest_joints",
                got: self.rest_joints.len(),
                expected: self.n_joints * 3,
            });
        }
        if self.joint_regressor.len() != self.n_joints * 3 * self.n_expressions {
            return Err(RigError::BadLength {
                what: "joint_regressor",
                got: self.joint_regressor.len(),
                expected: self.n_joints * 3 * self.n_expressions,
            });
        }
        if self.rest_joints.iter().any(|v| !v.is_finite()) {
            return Err(RigError::BadLength {
                what: "rest_joints (non-finite)",
                got: 0,
                expected: 0,
            });
        }
        Ok(())
    }

    /// Pose-corrective feature dimension: 9 rotation-residual entries per
    /// non-root joint.
    pub fn pose_feature_dim(&self) -> usize {
        9 * (self.n_joints - 1)
    }

    /// Expression-adjusted joint locations: rest + regressor * psi.
    pub fn joint_locations(&self, psi: &[f64]) -> Result<Vec<f64>, RigError> {
        if psi.len() != self.n_expressions {
            return Err(RigError::BadLength {
                what: "psi",
                got: psi.len(),
                expected: self.n_expressions,
            });
        }
        let mut joints = self.rest_joints.clone();
        for r in 0..self.n_joints * 3 {
            let row = &self.joint_regressor[r * self.n_expressions..(r + 1) * self.n_expressions];
            let mut acc = 0.0;
            for (e, &p) in psi.iter().enumerate() {
                acc += row[e] * p;
            }
            joints[r] += acc;
        }
        Ok(joints)
    }

    /// Adjoint of `joint_locations` into psi.
    pub fn joint_locations_backward(&self, d_joints: &[f64], d_psi: &mut [f64]) {
        for r in 0..self.n_joints * 3 {
            let row = &self.joint_regressor[r * self.n_expressions..(r + 1) * self.n_expressions];
            for e in 0..self.n_expressions {
                d_psi[e] += row[e] * d_joints[r];
            }
        }
    }
}

/// Global per-joint rigid transforms from forward kinematics, plus cached
/// locals for the backward pass.
#[derive(Debug, Clone)]
pub struct JointTransforms {
    pub global_rot: Vec<Mat3>,
    pub global_trans: Vec<Vec3>,
    pub local_rot: Vec<Mat3>,
}

/// Forward kinematics over the joint tree at pose `theta` and joint
/// locations `joints` (already expression-adjusted).
pub fn forward_kinematics(rig: &RigDefinition, theta: &[f64], joints: &[f64]) -> JointTransforms {
    let nj = rig.n_joints;
    let mut global_rot = Vec::with_capacity(nj);
    let mut global_trans = Vec::with_capacity(nj);
    let mut local_rot = Vec::with_capacity(nj);
    for j in 0..nj {
        let aa = [theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]];
        let rl = axis_angle_to_matrix(&aa);
        let jl = [joints[3 * j], joints[3 * j + 1], joints[3 * j + 2]];
        if rig.parents[j] < 0 {
            global_rot.push(rl);
            global_trans.push(jl);
        } else {
            let p = rig.parents[j] as usize;
            let jp = [joints[3 * p], joints[3 * p + 1], joints[3 * p + 2]];
            let off = [jl[0] - jp[0], jl[1] - jp[1], jl[2] - jp[2]];
            let rg: Mat3 = mat3_mul(&global_rot[p], &rl);
            let shift = mat3_mul_vec(&global_rot[p], &off);
            let tg = [
                shift[0] + global_trans[p][0],
                shift[1] + global_trans[p][1],
                shift[2] + global_trans[p][2],
            ];
            global_rot.push(rg);
            global_trans.push(tg);
        }
        local_rot.push(rl);
    }
    JointTransforms { global_rot, global_trans, local_rot }
}

/// Reverse pass through forward kinematics. Takes adjoints of the global
/// transforms, accumulates into d_theta (per-joint axis-angle) and d_joints.
pub fn forward_kinematics_backward(
    rig: &RigDefinition,
    theta: &[f64],
    joints: &[f64],
    fk: &JointTransforms,
    mut d_global_rot: Vec<Mat3>,
    mut d_global_trans: Vec<Vec3>,
    d_theta: &mut [f64],
    d_joints: &mut [f64],
) {
    let nj = rig.n_joints;
    let mut d_local_rot = vec![[[0.0; 3]; 3]; nj];
    for j in (0..nj).rev() {
        if rig.parents[j] < 0 {
            d_local_rot[j] = add_mat(&d_local_rot[j], &d_global_rot[j]);
            for k in 0..3 {
                d_joints[3 * j + k] += d_global_trans[j][k];
            }
        } else {
            let p = rig.parents[j] as usize;
            let rl_t = mat3_transpose(&fk.local_rot[j]);
            let rp_t = mat3_transpose(&fk.global_rot[p]);
            // R_g[j] = R_g[p] R_l[j]
            let drg = d_global_rot[j];
            let d_rp_from_rot = mat3_mul(&drg, &rl_t);
            d_local_rot[j] = add_mat(&d_local_rot[j], &mat3_mul(&rp_t, &drg));
            // t_g[j] = R_g[p] (J_j - J_p) + t_g[p]
            let off = [
                joints[3 * j] - joints[3 * rig.parents[j] as usize],
                joints[3 * j + 1] - joints[3 * rig.parents[j] as usize + 1],
                joints[3 * j + 2] - joints[3 * rig.parents[j] as usize + 2],
            ];
            let dtg = d_global_trans[j];
            let d_rp_from_trans: Mat3 = [
                [dtg[0] * off[0], dtg[0] * off[1], dtg[0] * off[2]],
                [dtg[1] * off[0], dtg[1] * off[1], dtg[1] * off[2]],
                [dtg[2] * off[0], dtg[2] * off[1], dtg[2] * off[2]],
            ];
            let d_off = mat3_mul_vec(&rp_t, &dtg);
            for k in 0..3 {
                d_joints[3 * j + k] += d_off[k];
                d_joints[3 * p + k] -= d_off[k];
                d_global_trans[p][k] += dtg[k];
            }
            d_global_rot[p] = add_mat(&d_global_rot[p], &add_mat(&d_rp_from_rot, &d_rp_from_trans));
        }
        let aa = [theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]];
        let daa = axis_angle_to_matrix_backward(&aa, &d_local_rot[j]);
        for k in 0..3 {
            d_theta[3 * j + k] += daa[k];
        }
    }
}

fn add_mat(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] + b[i][j];
        }
    }
    out
}

/// Serializes a rig as structured text (`gsavatar-rig v1`). Floats print in
/// Rust's shortest round-trip form, so read-back is lossless.
pub fn rig_to_text(rig: &RigDefinition) -> String {
    let mut s = String::new();
    writeln!(s, "gsavatar-rig v1").unwrap();
    writeln!(s, "joints {}", rig.n_joints).unwrap();
    for j in 0..rig.n_joints {
        writeln!(
            s,
            "joint {} {} {} {} {}",
            j,
            rig.parents[j],
            rig.rest_joints[3 * j],
            rig.rest_joints[3 * j + 1],
            rig.rest_joints[3 * j + 2]
        )
        .unwrap();
    }
    writeln!(s, "expressions {}", rig.n_expressions).unwrap();
    for r in 0..rig.n_joints * 3 {
        let row = &rig.joint_regressor[r * rig.n_expressions..(r + 1) * rig.n_expressions];
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(s, "regressor {}", cells.join(" ")).unwrap();
    }
    s
}

/// Parses the output of `rig_to_text`. Trailing content after the regressor
/// rows is returned untouched so composite files can append sections.
pub fn rig_from_text(text: &str) -> Result<(RigDefinition, usize), RigError> {
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: &str| RigError::Parse { line: line + 1, msg: msg.into() };
    let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
    if header.trim() != "gsavatar-rig v1" {
        return Err(parse_err(ln, "bad header"));
    }
    let (ln, joints_line) = lines.next().ok_or_else(|| parse_err(1, "missing joints"))?;
    let n_joints: usize = joints_line
        .trim()
        .strip_prefix("joints ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(ln, "bad joints line"))?;
    let mut parents = vec![0i32; n_joints];
    let mut rest = vec![0.0f64; n_joints * 3];
    for _ in 0..n_joints {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, "missing joint"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "joint" {
            return Err(parse_err(ln, "bad joint line"));
        }
        let j: usize = parts[1].parse().map_err(|_| parse_err(ln, "bad joint index"))?;
        parents[j] = parts[2].parse().map_err(|_| parse_err(ln, "bad parent"))?;
        for k in 0..3 {
            rest[3 * j + k] = parts[3 + k].parse().map_err(|_| parse_err(ln, "bad float"))?;
        }
    }
    let (ln, expr_line) = lines.next().ok_or_else(|| parse_err(0, "missing expressions"))?;
    let n_expressions: usize = expr_line
        .trim()
        .strip_prefix("expressions ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(ln, "bad expressions line"))?;
    let mut regressor = vec![0.0f64; n_joints * 3 * n_expressions];
    let mut consumed_lines = 2 + n_joints + 1;
    for r in 0..n_joints * 3 {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, "missing regressor row"))?;
        let row = line
            .strip_prefix("regressor")
            .ok_or_else(|| parse_err(ln, "bad regressor row"))?;
        let vals: Result<Vec<f64>, _> = row.split_whitespace().map(|v| v.parse()).collect();
        let vals = vals.map_err(|_| parse_err(ln, "bad float"))?;
        if vals.len() != n_expressions {
            return Err(parse_err(ln, "wrong regressor width"));
        }
        regressor[r * n_expressions..(r + 1) * n_expressions].copy_from_slice(&vals);
        consumed_lines = ln + 1;
    }
    let rig = RigDefinition { n_joints, parents, rest_joints: rest, n_expressions, joint_regressor: regressor };
    rig.validate()?;
    Ok((rig, consumed_lines))
}
