use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{generate_ray, intersect_unit_cube, Camera, Vec3, VoxelGrid};
use crate::metrics::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
        density: f64,
        rgb: Vec3,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
        density: f64,
        rgb: Vec3,
    },
}

impl Primitive {
    fn contains(&self, p: Vec3) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let d = crate::field::sub(p, *center);
                crate::field::dot(d, d) <= radius * radius
            }
            Primitive::Box {
                center,
                half_extents,
                ..
            } => (0..3).all(|a| (p[a] - center[a]).abs() <= half_extents[a]),
        }
    }

    fn value(&self) -> (f64, Vec3) {
        match self {
            Primitive::Sphere { density, rgb, .. } | Primitive::Box { density, rgb, .. } => {
                (*density, *rgb)
            }
        }
    }

    fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Primitive::Sphere { center, radius, .. } => (
                center.map(|c| c - radius),
                center.map(|c| c + radius),
            ),
            Primitive::Box {
                center,
                half_extents,
                ..
            } => (
                [0, 1, 2].map(|a| center[a] - half_extents[a]),
                [0, 1, 2].map(|a| center[a] + half_extents[a]),
            ),
        }
    }
}

/// Low-density haze whose color blends from `bottom` to `top` along z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub density: f64,
    pub bottom: Vec3,
    pub top: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: Option<Background>,
}

impl Default for SceneSpec {
    /// A floor slab, two spheres and a box.
    fn default() -> Self {
        Self {
            primitives: vec![
                Primitive::Box {
                    center: [0.5, 0.5, 0.14],
                    half_extents: [0.36, 0.36, 0.05],
                    density: 10.0,
                    rgb: [0.55, 0.55, 0.5],
                },
                Primitive::Sphere {
                    center: [0.52, 0.48, 0.45],
                    radius: 0.22,
                    density: 10.0,
                    rgb: [0.85, 0.3, 0.25],
                },
                Primitive::Box {
                    center: [0.28, 0.7, 0.32],
                    half_extents: [0.1, 0.1, 0.14],
                    density: 10.0,
                    rgb: [0.2, 0.55, 0.85],
                },
                Primitive::Sphere {
                    center: [0.72, 0.3, 0.7],
                    radius: 0.13,
                    density: 10.0,
                    rgb: [0.95, 0.85, 0.2],
                },
            ],
            background: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            let (lo, hi) = p.bounds();
            if lo.iter().any(|&v| v < 0.0) || hi.iter().any(|&v| v > 1.0) {
                return Err(Error::invalid(format!("primitive {i} leaves the unit cube")));
            }
            let (density, rgb) = p.value();
            if !(density >= 0.0) {
                return Err(Error::invalid(format!("primitive {i} has negative density")));
            }
            if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("primitive {i} color outside [0,1]")));
            }
        }
        if let Some(bg) = &self.background {
            if !(bg.density >= 0.0) {
                return Err(Error::invalid("background density must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Analytic field at `p`; the last primitive containing `p` wins.
    pub fn field_at(&self, p: Vec3) -> (f64, Vec3) {
        if let Some(prim) = self.primitives.iter().rev().find(|prim| prim.contains(p)) {
            return prim.value();
        }
        match &self.background {
            Some(bg) => {
                let t = p[2].clamp(0.0, 1.0);
                let rgb = [0, 1, 2].map(|c| bg.bottom[c] * (1.0 - t) + bg.top[c] * t);
                (bg.density, rgb)
            }
            None => (0.0, [0.0; 3]),
        }
    }
}

/// Grid whose activated values equal the analytic field at each lattice point.
pub fn bake_scene(spec: &SceneSpec, dims: [usize; 3]) -> Result<VoxelGrid> {
    let mut values = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = [
                    i as f64 / (dims[0] - 1) as f64,
                    j as f64 / (dims[1] - 1) as f64,
                    k as f64 / (dims[2] - 1) as f64,
                ];
                values.push(spec.field_at(p));
            }
        }
    }
    VoxelGrid::from_activated(dims, &values)
}

/// Ray-marches the analytic field directly (no grid), used as the reference
/// renderer for baked grids.
pub fn render_analytic(spec: &SceneSpec, cam: &Camera, n_samples: usize) -> Image {
    let w = cam.width as usize;
    let pixels = (0..w * cam.height as usize)
        .map(|i| {
            let ray = generate_ray(cam, ((i % w) as f64, (i / w) as f64));
            let (t0, t1) = intersect_unit_cube(ray.origin, ray.direction);
            if t1 <= t0 {
                return [0.0; 3];
            }
            let delta = (t1 - t0) / n_samples as f64;
            let mut rgb = [0.0; 3];
            let mut trans = 1.0f64;
            for s in 0..n_samples {
                let (sigma, c) = spec.field_at(ray.at(t0 + (s as f64 + 0.5) * delta));
                let alpha = 1.0 - (-sigma * delta).exp();
                for ch in 0..3 {
                    rgb[ch] += trans * alpha * c[ch];
                }
                trans *= 1.0 - alpha;
            }
            rgb
        })
        .collect();
    Image::from_pixels(cam.width, cam.height, pixels).expect("pixel count matches camera")
}
