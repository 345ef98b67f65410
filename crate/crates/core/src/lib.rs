//! Per-image contribution scoring for radiance-field reconstruction.
//!
//! A dense voxel grid stands in for the scene model. Training visits one
//! image per step, the held-out validation PSNR is measured after every step,
//! and each measured change is attributed to the image that was just trained
//! on. Summing those changes over all epochs but the first gives the image's
//! contribution score.
//!
//! Modules:
//! - [`field`]: voxel grid, pinhole cameras, emission-absorption rendering and
//!   its analytic gradient.
//! - [`metrics`]: L1, MSE, PSNR and the per-step validation evaluation.
//! - [`trainer`]: one-image-per-step training loop with per-step validation.
//! - [`valuation`]: deltas, aggregated scores, correlation and subset selection.
//! - [`synth`]: synthetic posed datasets with known corrupted images.

pub mod error;
pub mod field;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod valuation;

pub use error::{Error, Result};
pub use field::{Camera, Ray, VoxelGrid};
pub use metrics::{Image, MetricConfig};
pub use synth::{Dataset, ImageRecord, Split};
pub use trainer::{StepLog, TrainConfig, TrainState};
pub use valuation::{ContributionScore, ScoreLedger};
