use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{add, cross, dot, normalize, scale, Vec3};

/// Pinhole camera with a world-from-camera pose.
///
/// Camera axes follow the computer-vision convention: +x right, +y down,
/// +z forward. `rotation` is row-major; its columns are the camera axes
/// expressed in world coordinates, and `translation` is the camera center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// A ray that missed the scene cube has an empty interval.
    pub fn is_degenerate(&self) -> bool {
        !(self.t_far > self.t_near)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.direction, t))
    }
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: [[f64; 3]; 3],
        translation: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for a in 0..3 {
            for b in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][a] * r[k][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (rtr - want).abs() > 1e-6 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be non-zero"));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx)
            || !(0.0..f64::from(self.height)).contains(&self.cy)
        {
            return Err(Error::invalid("principal point outside the image"));
        }
        Ok(())
    }

    /// Camera at `eye` whose forward axis points at `target`, principal point
    /// at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, focal: f64, width: u32, height: u32) -> Result<Self> {
        let forward = normalize(super::sub(target, eye));
        let mut up = [0.0, 0.0, 1.0];
        if dot(forward, up).abs() > 0.999 {
            up = [0.0, 1.0, 0.0];
        }
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rotation = [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ];
        Self::new(
            rotation,
            eye,
            focal,
            focal,
            f64::from(width) / 2.0,
            f64::from(height) / 2.0,
            width,
            height,
        )
    }

    pub fn forward(&self) -> Vec3 {
        [self.rotation[0][2], self.rotation[1][2], self.rotation[2][2]]
    }

    /// Same pose at a different resolution; intrinsics scale with the image.
    pub fn rescaled(&self, width: u32, height: u32) -> Self {
        let sx = f64::from(width) / f64::from(self.width);
        let sy = f64::from(height) / f64::from(self.height);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }
}

/// Slab test against `[0,1]^3`. Returns `(t_near, t_far)` with `t_near >= 0`;
/// a miss yields `t_near == t_far`.
pub fn intersect_unit_cube(origin: Vec3, direction: Vec3) -> (f64, f64) {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let (o, d) = (origin[a], direction[a]);
        if d == 0.0 {
            if !(0.0..=1.0).contains(&o) {
                return (0.0, 0.0);
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut ta, mut tb) = ((0.0 - o) * inv, (1.0 - o) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t1 > t0 {
        (t0, t1)
    } else {
        (t0, t0)
    }
}

/// Ray through the center of pixel `(u, v)`.
pub fn generate_ray(cam: &Camera, pixel: (f64, f64)) -> Ray {
    let (u, v) = pixel;
    let d_cam = [(u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0];
    let r = &cam.rotation;
    let d_world = [
        r[0][0] * d_cam[0] + r[0][1] * d_cam[1] + r[0][2] * d_cam[2],
        r[1][0] * d_cam[0] + r[1][1] * d_cam[1] + r[1][2] * d_cam[2],
        r[2][0] * d_cam[0] + r[2][1] * d_cam[1] + r[2][2] * d_cam[2],
    ];
    let direction = normalize(d_world);
    let (t_near, t_far) = intersect_unit_cube(cam.translation, direction);
    Ray {
        origin: cam.translation,
        direction,
        t_near,
        t_far,
    }
}
