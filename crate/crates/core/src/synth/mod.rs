//! Synthetic posed datasets with ground-truth corruption labels.
//!
//! A [`SceneSpec`] of analytic primitives is baked into a voxel grid, ground
//! truth views are rendered from that grid (so the scene is exactly
//! representable by the model class), the grid is discarded, and a chosen
//! subset of training views is corrupted.

mod cameras;
mod corrupt;
mod dataset;
mod scene;

pub use cameras::sample_cameras;
pub use corrupt::{corrupt, Corruption, OCCLUDER_PALETTE};
pub use dataset::{
    generate_dataset, load_dataset, quantize, read_png, write_dataset, write_png, CorruptionPlan,
    Dataset, DatasetManifest, GenerateOptions, ImageRecord, ManifestCamera, ManifestImage, Split,
};
pub use scene::{bake_scene, render_analytic, Background, Primitive, SceneSpec};
