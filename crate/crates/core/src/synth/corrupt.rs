use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Vec3;
use crate::metrics::Image;

/// Colors used for synthetic transient occluders.
pub const OCCLUDER_PALETTE: [Vec3; 5] = [
    [0.95, 0.1, 0.9],
    [0.1, 0.95, 0.95],
    [0.97, 0.97, 0.97],
    [0.5, 1.0, 0.1],
    [1.0, 0.55, 0.05],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    /// Solid rectangle covering `fraction` of the image.
    Occluder { fraction: f64, color: Vec3 },
    /// Additive Gaussian noise, clamped to `[0,1]`.
    Noise { sigma: f64 },
    /// Multiplicative gain, clamped to `[0,1]`.
    Exposure { gain: f64 },
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Corruption::Occluder { fraction, color } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(Error::invalid(format!(
                        "occluder fraction must be in (0,1), got {fraction}"
                    )));
                }
                if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::invalid("occluder color outside [0,1]"));
                }
            }
            Corruption::Noise { sigma } if !(sigma > 0.0) => {
                return Err(Error::invalid(format!("noise sigma must be > 0, got {sigma}")));
            }
            Corruption::Exposure { gain } if !(gain > 0.0) => {
                return Err(Error::invalid(format!("exposure gain must be > 0, got {gain}")));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn corrupt(image: &Image, kind: &Corruption, rng: &mut impl Rng) -> Result<Image> {
    kind.validate()?;
    let mut out = image.clone();
    match *kind {
        Corruption::Occluder { fraction, color } => {
            let (w, h) = (image.width() as usize, image.height() as usize);
            let target = fraction * (w * h) as f64;
            // Widest rectangle must still fit vertically: rw >= target / h.
            let min_w = ((target / h as f64).ceil() as usize).clamp(1, w);
            let rw = rng.random_range(min_w..=w);
            let rh = ((target / rw as f64).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            let px = out.pixels_mut();
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    px[y * w + x] = color;
                }
            }
        }
        Corruption::Noise { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            for p in out.pixels_mut() {
                for c in p.iter_mut() {
                    *c = (*c + normal.sample(rng)).clamp(0.0, 1.0);
                }
            }
        }
        Corruption::Exposure { gain } => {
            for p in out.pixels_mut() {
                for c in p.iter_mut() {
                    *c = (*c * gain).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn gray(w: u32, h: u32) -> Image {
        Image::filled(w, h, [0.4, 0.4, 0.4])
    }

    fn changed(a: &Image, b: &Image) -> usize {
        a.pixels().iter().zip(b.pixels()).filter(|(p, q)| p != q).count()
    }

    #[test]
    fn occluder_covers_requested_area() {
        for seed in 0..50 {
            let img = gray(10, 10);
            let out = corrupt(
                &img,
                &Corruption::Occluder {
                    fraction: 0.5,
                    color: [1.0, 0.0, 1.0],
                },
                &mut stream(seed, "occ", 0),
            )
            .unwrap();
            let n = changed(&img, &out);
            assert!((40..=60).contains(&n), "changed {n}");
        }
    }

    #[test]
    fn occluder_area_on_non_square_images() {
        for (w, h, f) in [(64u32, 64u32, 0.2), (64, 64, 0.8), (7, 31, 0.35)] {
            let img = gray(w, h);
            let out = corrupt(
                &img,
                &Corruption::Occluder {
                    fraction: f,
                    color: [0.0; 3],
                },
                &mut stream(1, "occ", 1),
            )
            .unwrap();
            let n = changed(&img, &out) as f64;
            assert!((n - f * f64::from(w * h)).abs() <= f64::from(w), "{w}x{h} {f}: {n}");
        }
    }

    #[test]
    fn unit_gain_is_identity() {
        let img = gray(4, 3);
        let out = corrupt(&img, &Corruption::Exposure { gain: 1.0 }, &mut stream(0, "x", 0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn noise_changes_and_stays_in_range() {
        let img = Image::from_pixels(4, 4, (0..16).map(|i| [i as f64 / 15.0; 3]).collect()).unwrap();
        let out = corrupt(&img, &Corruption::Noise { sigma: 0.1 }, &mut stream(0, "n", 0)).unwrap();
        assert_ne!(out, img);
        assert!(out.pixels().iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let img = gray(4, 4);
        let mut rng = stream(0, "x", 0);
        for bad in [
            Corruption::Occluder {
                fraction: 0.0,
                color: [0.0; 3],
            },
            Corruption::Occluder {
                fraction: 1.0,
                color: [0.0; 3],
            },
            Corruption::Noise { sigma: 0.0 },
            Corruption::Exposure { gain: -1.0 },
        ] {
            assert!(corrupt(&img, &bad, &mut rng).is_err());
        }
    }
}
