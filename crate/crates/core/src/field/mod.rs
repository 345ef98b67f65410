//! Differentiable volumetric scene model.
//!
//! The scene lives in the unit cube `[0,1]^3` (world coordinates). A
//! [`VoxelGrid`] stores unconstrained raw parameters on a lattice whose corner
//! points sit on the cube corners; density is activated with softplus and
//! color with a sigmoid, then trilinearly interpolated.

mod camera;
mod grid;
mod render;

pub use camera::{generate_ray, intersect_unit_cube, Camera, Ray};
pub use grid::{sigmoid, softplus, softplus_inverse, logit, GridSample, VoxelGrid};
pub use render::{
    accumulate_ray_backward, render_image, render_image_seq, render_ray, render_ray_backward,
    render_ray_with, sample_ray, RayOutput, RenderSample, SparseGrad,
};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}
