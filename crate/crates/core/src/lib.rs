//! Deformable 3D Gaussian point avatar, CPU-only.
//!
//! A Gaussian point cloud is predicted by small weight-normalized MLPs from
//! learnable point positions, skinned into a per-frame deformed space by
//! blendshapes and linear blend skinning over a procedural rig, splatted by a
//! tiled differentiable rasterizer (with an exhaustive per-pixel oracle for
//! verification), and trained end to end against rendered frames with a
//! coarse-to-fine point insertion/deletion schedule.
//!
//! The synthetic data generator produces fully reproducible datasets with
//! known ground-truth Gaussians, rig and per-frame latents; ground-truth
//! images always come from the oracle renderer, never the fast path, so the
//! closed training loop is verified against an independent forward model.

pub mod autodiff;
pub mod camera;
pub mod cloud;
pub mod config;
pub mod deform;
pub mod fields;
pub mod image;
pub mod lifecycle;
pub mod losses;
pub mod nearest;
pub mod perceptual;
pub mod ssim;
pub mod parallel;
pub mod ply;
pub mod rig;
pub mod rotation;
pub mod splat;
pub mod synthdata;
pub mod trainer;
