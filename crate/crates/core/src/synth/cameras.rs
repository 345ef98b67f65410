use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{Camera, Vec3};

/// `n` cameras on a shell of radius in `radius_range` around `look_at`, all
/// aimed at `look_at`. Directions are uniform on the band of the unit sphere
/// whose z component lies in `z_range`; `(-1.0, 1.0)` is the whole sphere.
pub fn sample_cameras(
    n: usize,
    rng: &mut impl Rng,
    radius_range: (f64, f64),
    z_range: (f64, f64),
    look_at: Vec3,
    focal: f64,
    width: u32,
    height: u32,
) -> Result<Vec<Camera>> {
    let (z_lo, z_hi) = z_range;
    if !(-1.0..=1.0).contains(&z_lo) || !(-1.0..=1.0).contains(&z_hi) || z_lo >= z_hi {
        return Err(Error::invalid(format!("invalid camera z range {z_range:?}")));
    }
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(z_lo..z_hi);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r: f64 = if radius_range.1 > radius_range.0 {
                rng.random_range(radius_range.0..radius_range.1)
            } else {
                radius_range.0
            };
            let s = (1.0 - z * z).sqrt();
            let eye = [
                look_at[0] + r * s * phi.cos(),
                look_at[1] + r * s * phi.sin(),
                look_at[2] + r * z,
            ];
            Camera::look_at(eye, look_at, focal, width, height)
        })
        .collect()
}
