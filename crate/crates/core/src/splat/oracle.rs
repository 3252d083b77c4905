//! Exhaustive reference renderer: every Gaussian evaluated at every pixel,
//! double precision, global front-to-back depth sort with point-index
//! tie-break. Single-threaded by design; the fast path is checked against it.

use super::{project_cloud, walk_pixel, ProjectedScene};
use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::image::Image;

/// Global depth order over non-culled points, ties broken by index.
pub fn depth_order(scene: &ProjectedScene) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scene.n as u32)
        .filter(|&i| !scene.is_culled(i as usize))
        .collect();
    order.sort_unstable_by(|&a, &b| {
        scene.depth[a as usize]
            .partial_cmp(&scene.depth[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    order
}

pub fn render_oracle(
    cloud: &GaussianCloud,
    camera: &Camera,
    rendering_radius: f64,
    background: [f64; 3],
) -> Image {
    let scene = project_cloud(cloud, camera, rendering_radius, background);
    let order = depth_order(&scene);
    let mut img = Image::new(camera.width, camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (rgb, t, _) = walk_pixel(&scene, &order, x as f64 + 0.5, y as f64 + 0.5);
            img.set_pixel(
                x,
                y,
                [
                    rgb[0] + background[0] * t,
                    rgb[1] + background[1] * t,
                    rgb[2] + background[2] * t,
                ],
            );
        }
    }
    img
}
