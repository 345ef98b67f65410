//! Image-quality metrics: mean L1, MSE, PSNR, and the validation-set
//! evaluation run after every training step.
//!
//! L1 and MSE are both means over every channel of every pixel, so scores are
//! comparable across resolutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{generate_ray, render_ray, Camera, Ray, VoxelGrid};
use crate::par;
use crate::synth::ImageRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Largest representable pixel value.
    pub peak: f64,
    /// MSE is clamped to at least this before taking the log.
    pub mse_floor: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            peak: 1.0,
            mse_floor: 1e-12,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0) || !(self.mse_floor > 0.0) {
            return Err(Error::invalid("metric peak and mse_floor must be positive"));
        }
        Ok(())
    }

    /// PSNR in dB for a given MSE.
    pub fn psnr_from_mse(&self, mse: f64) -> f64 {
        10.0 * (self.peak * self.peak / mse.max(self.mse_floor)).log10()
    }
}

/// Row-major RGB float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Bilinear sample of the image at the centers of a `width`×`height`
    /// pixel lattice covering the same frame, i.e. the value a single ray
    /// through each coarse pixel center sees.
    pub fn resample(&self, width: u32, height: u32) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        let taps = |o: u32, s: f64, n: u32| {
            let c = ((f64::from(o) + 0.5) * s - 0.5).clamp(0.0, f64::from(n - 1));
            let i0 = (c.floor() as u32).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, c - f64::from(i0))
        };
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = taps(x, sx, self.width);
                let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
                pixels.push(std::array::from_fn(|k| {
                    (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k])
                }));
            }
        }
        Image { width, height, pixels }
    }

    /// Box-filtered resize: each output pixel averages the source pixels
    /// whose centers fall inside its footprint.
    pub fn downsample(&self, width: u32, height: u32) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        let span = |o: u32, s: f64, n: u32| {
            let lo = ((f64::from(o) * s - 0.5).ceil().max(0.0)) as u32;
            let hi = ((f64::from(o + 1) * s - 0.5).ceil() as u32).min(n);
            (lo, hi.max(lo + 1).min(n))
        };
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let (y0, y1) = span(y, sy, self.height);
            for x in 0..width {
                let (x0, x1) = span(x, sx, self.width);
                let mut acc = [0.0; 3];
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let p = self.get(xx, yy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                let n = f64::from((x1 - x0) * (y1 - y0));
                pixels.push([acc[0] / n, acc[1] / n, acc[2] / n]);
            }
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width as usize,
                self.height as usize,
                other.width as usize,
                other.height as usize,
            ));
        }
        Ok(())
    }
}

fn mean_over_channels(a: &Image, b: &Image, f: impl Fn(f64) -> f64) -> Result<f64> {
    a.check_same_dims(b)?;
    let n = a.pixels.len() * 3;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| f(p[0] - q[0]) + f(p[1] - q[1]) + f(p[2] - q[2]))
        .sum();
    Ok(sum / n as f64)
}

/// Mean absolute difference over all channels.
pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    mean_over_channels(a, b, f64::abs)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    mean_over_channels(a, b, |d| d * d)
}

pub fn psnr(a: &Image, b: &Image, cfg: &MetricConfig) -> Result<f64> {
    Ok(cfg.psnr_from_mse(mse(a, b)?))
}

/// Mean validation PSNR and mean validation L1 over the views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub psnr: f64,
    pub l1: f64,
}

struct ValidationView {
    rays: Vec<Ray>,
    target: Image,
}

/// Validation views with rays and downsampled targets precomputed once, so
/// per-step evaluation only renders.
pub struct ValidationSet {
    views: Vec<ValidationView>,
    n_samples: usize,
    cfg: MetricConfig,
}

/// Resolution used when evaluating at `scale` of `(width, height)`.
pub fn scaled_resolution(width: u32, height: u32, scale: f64) -> (u32, u32) {
    let s = |v: u32| ((f64::from(v) * scale).round() as u32).max(1);
    (s(width), s(height))
}

pub fn camera_rays(cam: &Camera) -> Vec<Ray> {
    let w = cam.width as usize;
    (0..w * cam.height as usize)
        .map(|i| generate_ray(cam, ((i % w) as f64, (i / w) as f64)))
        .collect()
}

impl ValidationSet {
    pub fn new(
        records: &[&ImageRecord],
        scale: f64,
        n_samples: usize,
        cfg: MetricConfig,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyValidationSet);
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::invalid(format!(
                "valuation resolution scale must be in (0,1], got {scale}"
            )));
        }
        cfg.validate()?;
        let views = records
            .iter()
            .map(|r| {
                let (w, h) = scaled_resolution(r.camera.width, r.camera.height, scale);
                let cam = r.camera.rescaled(w, h);
                ValidationView {
                    rays: camera_rays(&cam),
                    target: r.image.resample(w, h),
                }
            })
            .collect();
        Ok(Self {
            views,
            n_samples,
            cfg,
        })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Per-view PSNR and L1, in view order.
    pub fn evaluate_views(&self, grid: &VoxelGrid) -> Vec<ValidationScore> {
        let all: Vec<(usize, usize)> = self
            .views
            .iter()
            .enumerate()
            .flat_map(|(v, view)| (0..view.rays.len()).map(move |i| (v, i)))
            .collect();
        let rendered = par::map_slice(&all, |&(v, i)| {
            render_ray(grid, &self.views[v].rays[i], self.n_samples).rgb
        });
        let mut offset = 0;
        self.views
            .iter()
            .map(|view| {
                let n = view.rays.len();
                let img = Image {
                    width: view.target.width,
                    height: view.target.height,
                    pixels: rendered[offset..offset + n].to_vec(),
                };
                offset += n;
                ValidationScore {
                    psnr: psnr(&img, &view.target, &self.cfg).expect("same dims"),
                    l1: l1_loss(&img, &view.target).expect("same dims"),
                }
            })
            .collect()
    }

    pub fn evaluate(&self, grid: &VoxelGrid) -> ValidationScore {
        mean_score(&self.evaluate_views(grid))
    }
}

/// Arithmetic mean of per-view scores.
pub fn mean_score(views: &[ValidationScore]) -> ValidationScore {
    let n = views.len() as f64;
    ValidationScore {
        psnr: views.iter().map(|s| s.psnr).sum::<f64>() / n,
        l1: views.iter().map(|s| s.l1).sum::<f64>() / n,
    }
}

/// Renders every validation view at `scale` of its native resolution and
/// returns mean PSNR and mean L1 across views.
pub fn validation_psnr(
    grid: &VoxelGrid,
    val_set: &[&ImageRecord],
    cfg: &MetricConfig,
    scale: f64,
    n_samples: usize,
) -> Result<ValidationScore> {
    Ok(ValidationSet::new(val_set, scale, n_samples, *cfg)?.evaluate(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: u32, h: u32, px: &[[f64; 3]]) -> Image {
        Image::from_pixels(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let a = img(1, 1, &[[0.0; 3]]);
        let b = img(1, 1, &[[0.3; 3]]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert!((l1_loss(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(l1_loss(&a, &b).unwrap(), l1_loss(&b, &a).unwrap());
    }

    #[test]
    fn mse_examples() {
        let a = img(2, 1, &[[0.0; 3], [0.0; 3]]);
        let b = img(2, 1, &[[0.1; 3], [0.3; 3]]);
        assert!((mse(&a, &b).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_examples() {
        let cfg = MetricConfig::default();
        assert!((cfg.psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert!(cfg.psnr_from_mse(1.0).abs() < 1e-12);
        let a = img(1, 1, &[[0.25; 3]]);
        assert!((psnr(&a, &a, &cfg).unwrap() - 120.0).abs() < 1e-9);
        let cfg255 = MetricConfig {
            peak: 255.0,
            ..cfg
        };
        assert!((cfg255.psnr_from_mse(255.0 * 255.0) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = img(1, 1, &[[0.0; 3]]);
        let b = img(2, 1, &[[0.0; 3], [0.0; 3]]);
        assert!(matches!(l1_loss(&a, &b), Err(Error::DimensionMismatch(..))));
        assert!(mse(&a, &b).is_err());
        assert!(psnr(&a, &b, &MetricConfig::default()).is_err());
    }

    #[test]
    fn mean_score_averages_views() {
        let s = mean_score(&[
            ValidationScore { psnr: 10.0, l1: 0.2 },
            ValidationScore { psnr: 20.0, l1: 0.4 },
        ]);
        assert!((s.psnr - 15.0).abs() < 1e-12);
        assert!((s.l1 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_validation_set_is_rejected() {
        assert!(matches!(
            ValidationSet::new(&[], 1.0, 8, MetricConfig::default()),
            Err(Error::EmptyValidationSet)
        ));
    }

    #[test]
    fn downsample_box_averages() {
        let px: Vec<[f64; 3]> = (0..16).map(|i| [i as f64; 3]).collect();
        let a = img(4, 4, &px);
        let d = a.downsample(2, 2);
        // top-left block: 0,1,4,5
        assert_eq!(d.get(0, 0), [2.5; 3]);
        assert_eq!(d.get(1, 1), [12.5; 3]);
        assert_eq!(a.downsample(4, 4), a);
    }

    #[test]
    fn resample_hits_coarse_pixel_centers() {
        let px: Vec<[f64; 3]> = (0..16).map(|i| [i as f64; 3]).collect();
        let a = img(4, 4, &px);
        // factor 2: centers fall between 2x2 blocks
        assert_eq!(a.resample(2, 2).get(0, 0), [2.5; 3]);
        assert_eq!(a.resample(2, 2).get(1, 1), [12.5; 3]);
        // factor 4: center of the whole frame, between pixels 5, 6, 9, 10
        assert_eq!(a.resample(1, 1).get(0, 0), [7.5; 3]);
        assert_eq!(a.resample(4, 4), a);
    }

    fn arb_image(w: u32, h: u32) -> impl Strategy<Value = Image> {
        proptest::collection::vec(proptest::array::uniform3(0.0f64..1.0), (w * h) as usize)
            .prop_map(move |p| Image::from_pixels(w, h, p).unwrap())
    }

    proptest! {
        #[test]
        fn l1_triangle_inequality(a in arb_image(3, 2), b in arb_image(3, 2), c in arb_image(3, 2)) {
            let ab = l1_loss(&a, &b).unwrap();
            let bc = l1_loss(&b, &c).unwrap();
            let ac = l1_loss(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn metrics_invariant_under_channel_permutation(a in arb_image(2, 2), b in arb_image(2, 2)) {
            let perm = |i: &Image| {
                let px = i.pixels().iter().map(|p| [p[2], p[0], p[1]]).collect();
                Image::from_pixels(i.width(), i.height(), px).unwrap()
            };
            let (pa, pb) = (perm(&a), perm(&b));
            prop_assert!((l1_loss(&a, &b).unwrap() - l1_loss(&pa, &pb).unwrap()).abs() < 1e-12);
            prop_assert!((mse(&a, &b).unwrap() - mse(&pa, &pb).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn psnr_strictly_decreasing_in_mse(m in 1e-10f64..10.0, k in 1.0001f64..5.0) {
            let cfg = MetricConfig::default();
            prop_assert!(cfg.psnr_from_mse(m * k) < cfg.psnr_from_mse(m));
        }
    }
}
