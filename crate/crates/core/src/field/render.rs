//! Emission-absorption rendering over a [`VoxelGrid`] and its analytic
//! gradient with respect to the raw grid parameters.

use std::collections::BTreeMap;

use crate::metrics::Image;
use crate::par;

use super::grid::{activation_grad, Footprint};
use super::{generate_ray, Camera, Ray, Vec3, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOutput {
    pub rgb: Vec3,
    pub transmittance: f64,
}

const BACKGROUND: RayOutput = RayOutput {
    rgb: [0.0; 3],
    transmittance: 1.0,
};

/// Quadrature points along one ray.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderSample {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub density: Vec<f64>,
    pub rgb: Vec<Vec3>,
}

/// Gradient restricted to the cells a ray touched, keyed by cell index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub cells: BTreeMap<usize, [f64; 4]>,
}

impl SparseGrad {
    pub fn get(&self, idx: usize) -> [f64; 4] {
        self.cells.get(&idx).copied().unwrap_or([0.0; 4])
    }

    fn add(&mut self, idx: usize, g: [f64; 4]) {
        let e = self.cells.entry(idx).or_insert([0.0; 4]);
        for q in 0..4 {
            e[q] += g[q];
        }
    }
}

/// Stratified positions: `t_near + (i + offset_i) * delta`, midpoints when no
/// offsets are given. Every stratum has length `delta`.
#[inline]
fn stratum(ray: &Ray, n: usize, offsets: Option<&[f64]>, i: usize) -> (f64, f64) {
    let delta = (ray.t_far - ray.t_near) / n as f64;
    let o = offsets.map_or(0.5, |o| o[i]);
    (ray.t_near + (i as f64 + o) * delta, delta)
}

pub fn sample_ray(grid: &VoxelGrid, ray: &Ray, n_samples: usize, offsets: Option<&[f64]>) -> RenderSample {
    let mut out = RenderSample::default();
    if ray.is_degenerate() || n_samples == 0 {
        return out;
    }
    for i in 0..n_samples {
        let (t, delta) = stratum(ray, n_samples, offsets, i);
        let s = grid.sample(ray.at(t));
        out.t.push(t);
        out.delta.push(delta);
        out.density.push(s.density);
        out.rgb.push(s.rgb);
    }
    out
}

pub fn render_ray(grid: &VoxelGrid, ray: &Ray, n_samples: usize) -> RayOutput {
    render_ray_with(grid, ray, n_samples, None)
}

pub fn render_ray_with(
    grid: &VoxelGrid,
    ray: &Ray,
    n_samples: usize,
    offsets: Option<&[f64]>,
) -> RayOutput {
    if ray.is_degenerate() || n_samples == 0 {
        return BACKGROUND;
    }
    let mut rgb = [0.0; 3];
    let mut trans = 1.0;
    for i in 0..n_samples {
        let (t, delta) = stratum(ray, n_samples, offsets, i);
        let v = grid.interpolate(&grid.footprint(ray.at(t)));
        let alpha = -(-v[0] * delta).exp_m1();
        let w = trans * alpha;
        rgb[0] += w * v[1];
        rgb[1] += w * v[2];
        rgb[2] += w * v[3];
        trans *= 1.0 - alpha;
    }
    RayOutput {
        rgb,
        transmittance: trans,
    }
}

struct Forward {
    fp: Footprint,
    value: [f64; 4],
    delta: f64,
    alpha: f64,
    trans: f64,
}

/// Renders one ray, asks `d_rgb` for the upstream gradient of the rendered
/// color, and streams `(cell, d_raw)` contributions into `sink`.
///
/// Contributions arrive in sample order then corner order, so a sink that
/// sums them produces the same bits on every call.
pub fn accumulate_ray_backward<D, S>(
    grid: &VoxelGrid,
    ray: &Ray,
    n_samples: usize,
    offsets: Option<&[f64]>,
    d_rgb: D,
    mut sink: S,
) -> RayOutput
where
    D: FnOnce(Vec3) -> Vec3,
    S: FnMut(usize, [f64; 4]),
{
    if ray.is_degenerate() || n_samples == 0 {
        let _ = d_rgb(BACKGROUND.rgb);
        return BACKGROUND;
    }
    let mut fwd = Vec::with_capacity(n_samples);
    let mut rgb = [0.0; 3];
    let mut trans = 1.0;
    for i in 0..n_samples {
        let (t, delta) = stratum(ray, n_samples, offsets, i);
        let fp = grid.footprint(ray.at(t));
        let value = grid.interpolate(&fp);
        let alpha = -(-value[0] * delta).exp_m1();
        let w = trans * alpha;
        rgb[0] += w * value[1];
        rgb[1] += w * value[2];
        rgb[2] += w * value[3];
        fwd.push(Forward {
            fp,
            value,
            delta,
            alpha,
            trans,
        });
        trans *= 1.0 - alpha;
    }
    let g = d_rgb(rgb);

    // Walk back to front; `after` holds sum_{j>i} w_j (c_j . g).
    let mut after = 0.0;
    let raw = grid.raw();
    let act = grid.activated();
    for s in fwd.iter().rev() {
        let c_dot_g = s.value[1] * g[0] + s.value[2] * g[1] + s.value[3] * g[2];
        let w = s.trans * s.alpha;
        let d_density = s.delta * (s.trans * (1.0 - s.alpha) * c_dot_g - after);
        let d_color = [w * g[0], w * g[1], w * g[2]];
        after += w * c_dot_g;
        for c in 0..8 {
            let cell = s.fp.cells[c];
            let wt = s.fp.weights[c];
            let da = activation_grad(raw[cell], act[cell]);
            sink(
                cell,
                [
                    wt * d_density * da[0],
                    wt * d_color[0] * da[1],
                    wt * d_color[1] * da[2],
                    wt * d_color[2] * da[3],
                ],
            );
        }
    }
    RayOutput {
        rgb,
        transmittance: trans,
    }
}

/// Gradient of `rgb(ray) . d_rgb` with respect to every raw parameter the ray
/// touched.
pub fn render_ray_backward(grid: &VoxelGrid, ray: &Ray, n_samples: usize, d_rgb: Vec3) -> SparseGrad {
    let mut grad = SparseGrad::default();
    accumulate_ray_backward(grid, ray, n_samples, None, |_| d_rgb, |cell, g| grad.add(cell, g));
    grad
}

pub fn render_image(grid: &VoxelGrid, cam: &Camera, n_samples: usize) -> Image {
    let w = cam.width as usize;
    let pixels = par::map_range(w * cam.height as usize, |i| {
        let ray = generate_ray(cam, ((i % w) as f64, (i / w) as f64));
        render_ray(grid, &ray, n_samples).rgb
    });
    Image::from_pixels(cam.width, cam.height, pixels).expect("pixel count matches camera")
}

/// Single-threaded reference path for [`render_image`].
pub fn render_image_seq(grid: &VoxelGrid, cam: &Camera, n_samples: usize) -> Image {
    let w = cam.width as usize;
    let pixels = (0..w * cam.height as usize)
        .map(|i| {
            let ray = generate_ray(cam, ((i % w) as f64, (i / w) as f64));
            render_ray(grid, &ray, n_samples).rgb
        })
        .collect();
    Image::from_pixels(cam.width, cam.height, pixels).expect("pixel count matches camera")
}
