use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render_image, Camera};
use crate::metrics::Image;
use crate::rng::stream;

use super::{bake_scene, corrupt, sample_cameras, Corruption, SceneSpec, OCCLUDER_PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u32,
    pub image: Image,
    pub camera: Camera,
    pub split: Split,
    pub corruption: Option<Corruption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, seed: u64) -> Result<Self> {
        let ds = Self { records, seed };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id) {
                return Err(Error::invalid(format!("duplicate image id {}", r.id)));
            }
            if r.corruption.is_some() && r.split != Split::Train {
                return Err(Error::invalid(format!(
                    "image {} is corrupted but not in the train split",
                    r.id
                )));
            }
            r.camera.validate()?;
            if r.image.width() != r.camera.width || r.image.height() != r.camera.height {
                return Err(Error::invalid(format!(
                    "image {} size does not match its camera",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn train(&self) -> Vec<&ImageRecord> {
        self.split(Split::Train)
    }

    pub fn val(&self) -> Vec<&ImageRecord> {
        self.split(Split::Val)
    }

    pub fn test(&self) -> Vec<&ImageRecord> {
        self.split(Split::Test)
    }

    /// Keeps only the listed training images; val and test are untouched.
    pub fn with_train_subset(&self, keep: &[u32]) -> Dataset {
        let keep: BTreeSet<u32> = keep.iter().copied().collect();
        Dataset {
            records: self
                .records
                .iter()
                .filter(|r| r.split != Split::Train || keep.contains(&r.id))
                .cloned()
                .collect(),
            seed: self.seed,
        }
    }
}

/// Which training images get which corruption, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPlan {
    pub entries: Vec<(u32, Corruption)>,
}

impl CorruptionPlan {
    pub fn none() -> Self {
        Self::default()
    }

    /// Occludes `round(image_fraction * n_train)` randomly chosen training
    /// images, each with a rectangle of `area` and a palette color.
    pub fn random_occluders(n_train: usize, image_fraction: f64, area: f64, seed: u64) -> Self {
        let mut rng = stream(seed, "corruption-plan", 0);
        let k = ((image_fraction * n_train as f64).round() as usize).min(n_train);
        let mut chosen: Vec<usize> = index::sample(&mut rng, n_train, k).into_vec();
        chosen.sort_unstable();
        let entries = chosen
            .into_iter()
            .map(|i| {
                let color = OCCLUDER_PALETTE[rng.random_range(0..OCCLUDER_PALETTE.len())];
                (
                    i as u32,
                    Corruption::Occluder {
                        fraction: area,
                        color,
                    },
                )
            })
            .collect();
        Self { entries }
    }

    fn get(&self, id: u32) -> Option<&Corruption> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Square image side in pixels.
    pub resolution: u32,
    pub seed: u64,
    pub bake_dims: [usize; 3],
    pub n_samples: usize,
    pub radius_range: (f64, f64),
    /// Range of the z component of the unit direction from the scene center
    /// to each camera.
    pub z_range: (f64, f64),
    /// Focal length as a multiple of the image width.
    pub focal_scale: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_val: 8,
            n_test: 8,
            resolution: 64,
            seed: 0,
            bake_dims: [32, 32, 32],
            n_samples: 64,
            radius_range: (1.3, 1.7),
            z_range: (0.1, 1.0),
            focal_scale: 0.9,
        }
    }
}

/// Rounds every channel to 8 bits, matching what a PNG round trip yields.
pub fn quantize(image: &Image) -> Image {
    let px = image
        .pixels()
        .iter()
        .map(|p| p.map(|c| f64::from((c.clamp(0.0, 1.0) * 255.0).round() as u8) / 255.0))
        .collect();
    Image::from_pixels(image.width(), image.height(), px).expect("same size")
}

/// Renders ground truth from the baked scene, applies the corruption plan to
/// training images, and quantizes every image to 8 bits. Ids are assigned
/// train first, then val, then test.
pub fn generate_dataset(
    spec: &SceneSpec,
    opts: &GenerateOptions,
    plan: &CorruptionPlan,
) -> Result<Dataset> {
    spec.validate()?;
    if opts.n_train == 0 || opts.n_val == 0 || opts.n_test == 0 {
        return Err(Error::invalid("every split needs at least one image"));
    }
    for (id, c) in &plan.entries {
        if *id as usize >= opts.n_train {
            return Err(Error::invalid(format!(
                "corruption plan references non-train image {id}"
            )));
        }
        c.validate()?;
    }
    let grid = bake_scene(spec, opts.bake_dims)?;
    let total = opts.n_train + opts.n_val + opts.n_test;
    let res = opts.resolution;
    let cameras = sample_cameras(
        total,
        &mut stream(opts.seed, "cameras", 0),
        opts.radius_range,
        opts.z_range,
        [0.5, 0.5, 0.5],
        opts.focal_scale * f64::from(res),
        res,
        res,
    )?;
    let records = crate::par::map_slice(&cameras.iter().enumerate().collect::<Vec<_>>(), |&(i, cam)| {
        let id = i as u32;
        let split = if i < opts.n_train {
            Split::Train
        } else if i < opts.n_train + opts.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let clean = render_image(&grid, cam, opts.n_samples);
        let corruption = plan.get(id).cloned();
        let image = match &corruption {
            Some(c) => corrupt(&clean, c, &mut stream(opts.seed, "corrupt", u64::from(id)))?,
            None => clean,
        };
        Ok(ImageRecord {
            id,
            image: quantize(&image),
            camera: cam.clone(),
            split,
            corruption,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, opts.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCamera {
    /// Row-major world-from-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&Camera> for ManifestCamera {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            translation: c.translation,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl ManifestCamera {
    pub fn to_camera(&self) -> Result<Camera> {
        let r = &self.rotation;
        Camera::new(
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            self.translation,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: u32,
    /// Path relative to the manifest's directory.
    pub file: String,
    pub split: Split,
    pub corruption: Option<Corruption>,
    pub camera: ManifestCamera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Scene spec path relative to the manifest's directory.
    pub scene: String,
    pub seed: u64,
    pub images: Vec<ManifestImage>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Same manifest with only the listed training images kept.
    pub fn with_train_subset(&self, keep: &[u32]) -> DatasetManifest {
        let keep: BTreeSet<u32> = keep.iter().copied().collect();
        DatasetManifest {
            images: self
                .images
                .iter()
                .filter(|m| m.split != Split::Train || keep.contains(&m.id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Rebases relative paths so the manifest can be written into `to_dir`.
    pub fn relocated(&self, from_dir: &Path, to_dir: &Path) -> DatasetManifest {
        let rebase = |p: &str| -> String {
            let abs = from_dir.join(p);
            match abs.strip_prefix(to_dir) {
                Ok(rel) => rel.to_string_lossy().into_owned(),
                Err(_) => abs.to_string_lossy().into_owned(),
            }
        };
        DatasetManifest {
            scene: rebase(&self.scene),
            seed: self.seed,
            images: self
                .images
                .iter()
                .map(|m| ManifestImage {
                    file: rebase(&m.file),
                    ..m.clone()
                })
                .collect(),
        }
    }
}

pub fn write_png(image: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width(), image.height());
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image
        .pixels()
        .iter()
        .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::format("PNG", e.to_string()))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::format("PNG", format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("PNG", format!("{}: {e}", path.display())))?;
    let channels = info.color_type.samples();
    let px = buf[..info.buffer_size()]
        .chunks_exact(channels)
        .map(|c| match channels {
            1 | 2 => [f64::from(c[0]) / 255.0; 3],
            _ => [
                f64::from(c[0]) / 255.0,
                f64::from(c[1]) / 255.0,
                f64::from(c[2]) / 255.0,
            ],
        })
        .collect();
    Image::from_pixels(info.width, info.height, px)
}

/// Writes `scene.json`, one PNG per image under `images/`, and
/// `manifest.json` into `out_dir`. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, spec: &SceneSpec, out_dir: &Path) -> Result<PathBuf> {
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let scene_path = out_dir.join("scene.json");
    fs::write(&scene_path, serde_json::to_string_pretty(spec)? + "\n")
        .map_err(|e| Error::io(&scene_path, e))?;
    let mut images = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        let file = format!("images/{:04}.png", r.id);
        write_png(&r.image, &out_dir.join(&file))?;
        images.push(ManifestImage {
            id: r.id,
            file,
            split: r.split,
            corruption: r.corruption.clone(),
            camera: ManifestCamera::from(&r.camera),
        });
    }
    let manifest = DatasetManifest {
        scene: "scene.json".into(),
        seed: dataset.seed,
        images,
    };
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// Loads a manifest and every image it references.
pub fn load_dataset(manifest_path: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let records = manifest
        .images
        .iter()
        .map(|m| {
            Ok(ImageRecord {
                id: m.id,
                image: read_png(&base.join(&m.file))?,
                camera: m.camera.to_camera()?,
                split: m.split,
                corruption: m.corruption.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(records, manifest.seed)?, manifest))
}
