//! Pinhole camera: intrinsics, world-to-camera rigid transform, depth planes.

use crate::rotation::{mat3_det, mat3_mul, mat3_mul_vec, mat3_transpose, Mat3, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive, got ({0}, {1})")]
    NonPositiveFocal(f64, f64),
    #[error("near plane {near} must be below far plane {far}")]
    BadDepthPlanes { near: f64, far: f64 },
    #[error("rotation part is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("resolution must be nonzero")]
    ZeroResolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation: x_cam = R x_world + t.
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(CameraError::NonPositiveFocal(fx, fy));
        }
        if !(near < far) {
            return Err(CameraError::BadDepthPlanes { near, far });
        }
        if width == 0 || height == 0 {
            return Err(CameraError::ZeroResolution);
        }
        let rtr = mat3_mul(&mat3_transpose(&rotation), &rotation);
        let mut dev = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((rtr[i][j] - target).abs());
            }
        }
        dev = dev.max((mat3_det(&rotation) - 1.0).abs());
        if dev > 1e-9 {
            return Err(CameraError::NotOrthonormal(dev));
        }
        Ok(Self { fx, fy, cx, cy, width, height, rotation, translation, near, far })
    }

    /// Axis-aligned camera at `position` looking down +z of its own frame
    /// toward `target`, with `up_hint` resolving the roll.
    pub fn look_at(
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        position: Vec3,
        target: Vec3,
        up_hint: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        let fwd = normalize([
            target[0] - position[0],
            target[1] - position[1],
            target[2] - position[2],
        ]);
        let right = normalize(cross(&fwd, &up_hint));
        let down = cross(&fwd, &right);
        // Rows of R are the camera axes expressed in world coordinates:
        // x_cam = right, y_cam = down (image y grows downward), z_cam = forward.
        let rotation = [right, down, fwd];
        let translation = [
            -dot(&right, &position),
            -dot(&down, &position),
            -dot(&fwd, &position),
        ];
        Self::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
            near,
            far,
        )
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        let r = mat3_mul_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Perspective projection of a camera-space point to pixel coordinates.
    pub fn project(&self, cam: &Vec3) -> [f64; 2] {
        [
            self.fx * cam[0] / cam[2] + self.cx,
            self.fy * cam[1] / cam[2] + self.cy,
        ]
    }

    /// Rescales intrinsics and resolution by an integer-friendly factor.
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self, CameraError> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
            self.rotation,
            self.translation,
            self.near,
            self.far,
        )
    }
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: Vec3) -> Vec3 {
    let n = dot(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn identity_camera(width: usize, height: usize, f: f64) -> Camera {
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
    fn optical_axis_projects_to_principal_point() {
        let cam = identity_camera(64, 64, 80.0);
        let p = cam.project(&cam.world_to_camera(&[0.0, 0.0, 1.0]));
        assert_eq!(p, [32.0, 32.0]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(-1.0, 1.0, 0.0, 0.0, 8, 8, eye, [0.0; 3], 0.1, 10.0).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 8, 8, eye, [0.0; 3], 10.0, 0.1).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            Camera::new(1.0, 1.0, 0.0, 0.0, 8, 8, skew, [0.0; 3], 0.1, 10.0),
            Err(CameraError::NotOrthonormal(_))
        ));
    }

    #[test]
    fn look_at_sees_target_at_center() {
        let cam = Camera::look_at(
            100.0,
            100.0,
            64,
            64,
            [1.0, 0.5, -2.0],
            [0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            0.01,
            100.0,
        )
        .unwrap();
        let c = cam.world_to_camera(&[0.0, 0.0, 0.0]);
        assert!(c[2] > 0.0, "target must be in front of the camera");
        let px = cam.project(&c);
        assert!((px[0] - 32.0).abs() < 1e-9 && (px[1] - 32.0).abs() < 1e-9);
    }
}
