//! Quaternion and axis-angle rotation math with analytic adjoints.
//!
//! Quaternions use (w, x, y, z) component order. All functions are f64 and
//! allocation-free; the `*_backward` functions return input adjoints given
//! output adjoints so callers can chain them by hand.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RotationError {
    #[error("cannot normalize a zero-norm quaternion")]
    DegenerateRotation,
}

pub type Quat = [f64; 4];
pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Threshold under which axis-angle uses the Taylor branch.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Normalizes `q` and builds the corresponding rotation matrix.
///
/// Zero-norm input is a degenerate rotation and rejected.
pub fn normalize_quaternion(q: &Quat) -> Result<(Quat, Mat3), RotationError> {
    let n2 = q.iter().map(|c| c * c).sum::<f64>();
    if n2 == 0.0 {
        return Err(RotationError::DegenerateRotation);
    }
    let inv = 1.0 / n2.sqrt();
    let u = [q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv];
    Ok((u, quat_to_matrix(&u)))
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_to_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = *q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Adjoint of `quat_to_matrix`: accumulates d(loss)/d(unit quat) from d(loss)/dR.
pub fn quat_to_matrix_backward(q: &Quat, d_r: &Mat3) -> Quat {
    let [w, x, y, z] = *q;
    let g = d_r;
    let dw = 2.0
        * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = 2.0
        * (y * g[0][1]
            + z * g[0][2]
            + y * g[1][0]
            + -2.0 * x * g[1][1]
            + -w * g[1][2]
            + z * g[2][0]
            + w * g[2][1]
            + -2.0 * x * g[2][2]);
    let dy = 2.0
        * (-2.0 * y * g[0][0]
            + x * g[0][1]
            + w * g[0][2]
            + x * g[1][0]
            + z * g[1][2]
            + -w * g[2][0]
            + z * g[2][1]
            + -2.0 * y * g[2][2]);
    let dz = 2.0
        * (-2.0 * z * g[0][0]
            + -w * g[0][1]
            + x * g[0][2]
            + w * g[1][0]
            + -2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    [dw, dx, dy, dz]
}

/// Adjoint of quaternion normalization: d(loss)/d(raw q) from d(loss)/d(unit q).
pub fn normalize_backward(raw: &Quat, d_unit: &Quat) -> Quat {
    let n = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    let inv = 1.0 / n;
    let u = [raw[0] * inv, raw[1] * inv, raw[2] * inv, raw[3] * inv];
    let dot = u[0] * d_unit[0] + u[1] * d_unit[1] + u[2] * d_unit[2] + u[3] * d_unit[3];
    [
        (d_unit[0] - u[0] * dot) * inv,
        (d_unit[1] - u[1] * dot) * inv,
        (d_unit[2] - u[2] * dot) * inv,
        (d_unit[3] - u[3] * dot) * inv,
    ]
}

/// Axis-angle (Rodrigues) vector to unit quaternion, with a second-order
/// Taylor branch for tiny angles.
pub fn axis_angle_to_quat(aa: &Vec3) -> Quat {
    let theta2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
    let theta = theta2.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        // cos(t/2) ~ 1 - t^2/8, sin(t/2)/t ~ 1/2 - t^2/48
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    [w, aa[0] * k, aa[1] * k, aa[2] * k]
}

/// Adjoint of `axis_angle_to_quat`.
pub fn axis_angle_to_quat_backward(aa: &Vec3, d_q: &Quat) -> Vec3 {
    let theta2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
    let theta = theta2.sqrt();
    // q = [w(theta), aa * k(theta)]
    // dw/d(aa_i) = w'(theta) * aa_i / theta ; d(k)/d(aa_i) = k'(theta) * aa_i / theta
    // Both w'/theta and k'/theta stay finite at theta -> 0.
    let (wp_over_t, kp_over_t, k) = if theta < SMALL_ANGLE {
        (-0.25 + theta2 / 96.0, -1.0 / 24.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        let k = half.sin() / theta;
        let wp = -0.5 * half.sin();
        let kp = (0.5 * half.cos() - k) / theta;
        (wp / theta, kp / theta, k)
    };
    let dot_vec = aa[0] * d_q[1] + aa[1] * d_q[2] + aa[2] * d_q[3];
    let common = d_q[0] * wp_over_t + dot_vec * kp_over_t;
    [
        common * aa[0] + k * d_q[1],
        common * aa[1] + k * d_q[2],
        common * aa[2] + k * d_q[3],
    ]
}

/// Rodrigues rotation matrix of an axis-angle vector.
pub fn axis_angle_to_matrix(aa: &Vec3) -> Mat3 {
    quat_to_matrix(&axis_angle_to_quat(aa))
}

/// Adjoint of `axis_angle_to_matrix`.
pub fn axis_angle_to_matrix_backward(aa: &Vec3, d_r: &Mat3) -> Vec3 {
    let q = axis_angle_to_quat(aa);
    let d_q = quat_to_matrix_backward(&q, d_r);
    axis_angle_to_quat_backward(aa, &d_q)
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_mul_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn mat3_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (a[i][j] - b[i][j]).abs() <= tol,
                    "entry ({i},{j}): {} vs {}",
                    a[i][j],
                    b[i][j]
                );
            }
        }
    }

    #[test]
    fn identity_quaternion() {
        let (u, r) = normalize_quaternion(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(u, [1.0, 0.0, 0.0, 0.0]);
        assert_mat_close(&r, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0.0);
    }

    #[test]
    fn half_turn_about_x() {
        let (_, r) = normalize_quaternion(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_mat_close(
            &r,
            &[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            0.0,
        );
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let (u, r) = normalize_quaternion(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(u, [1.0, 0.0, 0.0, 0.0]);
        assert_mat_close(&r, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0.0);
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        assert!(normalize_quaternion(&[0.0; 4]).is_err());
    }

    #[test]
    fn axis_angle_identity_and_half_turn() {
        let r = axis_angle_to_matrix(&[0.0, 0.0, 0.0]);
        assert_mat_close(&r, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0.0);
        let r = axis_angle_to_matrix(&[std::f64::consts::PI, 0.0, 0.0]);
        assert_mat_close(
            &r,
            &[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            1e-15,
        );
    }

    #[test]
    fn axis_angle_orthonormal_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..50 {
            let aa = [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ];
            let r = axis_angle_to_matrix(&aa);
            let rtr = mat3_mul(&mat3_transpose(&r), &r);
            assert_mat_close(
                &rtr,
                &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                1e-12,
            );
            assert!((mat3_det(&r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let raw: Quat = std::array::from_fn(|_| rng.random_range(-2.0..2.0_f64));
            if raw.iter().map(|c| c * c).sum::<f64>() < 1e-2 {
                continue;
            }
            let d_r: Mat3 = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            // scalar objective: sum(d_r .* R(normalize(raw)))
            let f = |q: &Quat| {
                let (u, r) = normalize_quaternion(q).unwrap();
                let _ = u;
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += d_r[i][j] * r[i][j];
                    }
                }
                s
            };
            let (u, _) = normalize_quaternion(&raw).unwrap();
            let d_unit = quat_to_matrix_backward(&u, &d_r);
            let analytic = normalize_backward(&raw, &d_unit);
            let h = 1e-6;
            for k in 0..4 {
                let mut qp = raw;
                qp[k] += h;
                let mut qm = raw;
                qm[k] -= h;
                let fd = (f(&qp) - f(&qm)) / (2.0 * h);
                assert!(
                    (fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "component {k}: fd {fd} vs analytic {}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn axis_angle_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for case in 0..20 {
            let scale = if case % 4 == 0 { 1e-6 } else { 2.0 };
            let aa: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0_f64) * scale);
            let d_r: Mat3 = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let f = |v: &Vec3| {
                let r = axis_angle_to_matrix(v);
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += d_r[i][j] * r[i][j];
                    }
                }
                s
            };
            let analytic = axis_angle_to_matrix_backward(&aa, &d_r);
            let h = 1e-6;
            for k in 0..3 {
                let mut p = aa;
                p[k] += h;
                let mut m = aa;
                m[k] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!(
                    (fd - analytic[k]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "case {case} component {k}: fd {fd} vs analytic {}",
                    analytic[k]
                );
            }
        }
    }
}
