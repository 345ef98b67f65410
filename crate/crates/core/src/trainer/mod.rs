//! One-image-per-step training with per-step validation measurement.
//!
//! Each epoch visits every training image exactly once in an order shuffled
//! from `(seed, epoch)`. A step samples pixel rays from that single image,
//! takes one optimizer step on their mean L1 loss, and (when enabled)
//! evaluates the validation set so the change can be attributed to the image.

mod checkpoint;
mod config;
mod optimizer;
mod steplog;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{accumulate_ray_backward, generate_ray, Ray, VoxelGrid};
use crate::metrics::{ValidationScore, ValidationSet};
use crate::par;
use crate::rng::{self, StreamRng};
use crate::synth::{Dataset, ImageRecord, Split};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{OptimizerKind, TrainConfig, ValuationMode};
pub use optimizer::OptimizerState;
pub use steplog::{format_sig9, StepLog, StepRecord, STEPLOG_HEADER};

/// Model parameters plus everything needed to continue training
/// deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub grid: VoxelGrid,
    pub optimizer: OptimizerState,
    /// Completed training steps.
    pub step: u64,
    /// Current epoch, 1-based; 0 before training starts.
    pub epoch: u32,
    /// Ray-sampling stream of the current epoch.
    pub rng: StreamRng,
    scratch: Scratch,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Scratch {
    grad: Vec<[f64; 4]>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let grid = VoxelGrid::filled(cfg.grid_dims, cfg.init_raw)?;
        Ok(Self::from_grid(grid, cfg))
    }

    pub fn from_grid(grid: VoxelGrid, cfg: &TrainConfig) -> Self {
        let n = grid.len();
        Self {
            optimizer: OptimizerState::new(cfg.optimizer, n),
            grid,
            step: 0,
            epoch: 0,
            rng: rng::stream(cfg.seed, "rays", 0),
            scratch: Scratch {
                grad: vec![[0.0; 4]; n],
                seen: vec![false; n],
                touched: Vec::new(),
            },
        }
    }

    /// Cells updated by the most recent step, ascending.
    pub fn last_touched(&self) -> &[usize] {
        &self.scratch.touched
    }
}

/// Order of training-image indices for `epoch`.
pub fn epoch_schedule(seed: u64, epoch: u32, n_images: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_images).collect();
    order.shuffle(&mut rng::stream(seed, "shuffle", u64::from(epoch)));
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub pixel: (u32, u32),
    pub target: [f64; 3],
    pub ray: Ray,
}

/// Distinct pixels drawn uniformly without replacement.
pub fn sample_pixel_rays(
    image: &ImageRecord,
    rays_per_step: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PixelSample>> {
    let (w, h) = (image.camera.width, image.camera.height);
    let n = w as usize * h as usize;
    if rays_per_step > n {
        return Err(Error::invalid(format!(
            "rays_per_step {rays_per_step} exceeds the {n} pixels of image {}",
            image.id
        )));
    }
    Ok(index::sample(rng, n, rays_per_step)
        .into_iter()
        .map(|i| {
            let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
            PixelSample {
                pixel: (x, y),
                target: image.image.get(x, y),
                ray: generate_ray(&image.camera, (f64::from(x), f64::from(y))),
            }
        })
        .collect())
}

/// One optimizer update from the rays of a single image; returns the mean L1
/// loss of the rendered colors before the update.
pub fn train_step(state: &mut TrainState, image: &ImageRecord, cfg: &TrainConfig) -> Result<f64> {
    let samples = sample_pixel_rays(image, cfg.rays_per_step, &mut state.rng)?;
    let n_samples = cfg.n_samples_per_ray;
    let offsets: Option<Vec<Vec<f64>>> = cfg.jitter.then(|| {
        samples
            .iter()
            .map(|_| (0..n_samples).map(|_| state.rng.random::<f64>()).collect())
            .collect()
    });
    let norm = 1.0 / (3.0 * samples.len() as f64);
    let grid = &state.grid;
    let per_ray = par::map_range(samples.len(), |r| {
        let s = &samples[r];
        let mut contrib = Vec::with_capacity(8 * n_samples);
        let mut abs_err = 0.0;
        accumulate_ray_backward(
            grid,
            &s.ray,
            n_samples,
            offsets.as_ref().map(|o| o[r].as_slice()),
            |rgb| {
                let mut d = [0.0; 3];
                for c in 0..3 {
                    let e = rgb[c] - s.target[c];
                    abs_err += e.abs();
                    d[c] = if e > 0.0 {
                        norm
                    } else if e < 0.0 {
                        -norm
                    } else {
                        0.0
                    };
                }
                d
            },
            |cell, g| contrib.push((cell as u32, g)),
        );
        (abs_err, contrib)
    });

    let loss = per_ray.iter().map(|(e, _)| e).sum::<f64>() * norm;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step: state.step + 1,
            reason: format!("non-finite training loss on image {}", image.id),
        });
    }

    let sc = &mut state.scratch;
    for &idx in &sc.touched {
        sc.grad[idx] = [0.0; 4];
        sc.seen[idx] = false;
    }
    sc.touched.clear();
    for (_, contrib) in &per_ray {
        for &(cell, g) in contrib {
            let cell = cell as usize;
            if !sc.seen[cell] {
                sc.seen[cell] = true;
                sc.touched.push(cell);
            }
            let acc = &mut sc.grad[cell];
            for q in 0..4 {
                acc[q] += g[q];
            }
        }
    }
    sc.touched.sort_unstable();
    state
        .optimizer
        .apply(&mut state.grid, cfg.learning_rate, &sc.grad, &sc.touched);
    state.step += 1;
    Ok(loss)
}

/// Stepwise driver around [`train_step`] that keeps the log and applies the
/// fixed-state revert when configured.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: Vec<&'a ImageRecord>,
    val: Option<ValidationSet>,
    state: TrainState,
    log: StepLog,
    schedule: Vec<usize>,
    position: usize,
    snapshot: Option<(VoxelGrid, OptimizerState)>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, cfg: &TrainConfig) -> Result<Self> {
        Self::with_state(dataset, cfg, TrainState::new(cfg)?)
    }

    pub fn with_state(dataset: &'a Dataset, cfg: &TrainConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        let train = dataset.train();
        if train.is_empty() {
            return Err(Error::invalid("dataset has no training images"));
        }
        let val_records = dataset.val();
        if val_records.is_empty() {
            return Err(Error::EmptyValidationSet);
        }
        let val = if cfg.eval_every_step {
            Some(ValidationSet::new(
                &val_records,
                cfg.valuation_resolution_scale,
                cfg.n_samples_per_ray,
                cfg.metric,
            )?)
        } else {
            None
        };
        let mut log = StepLog {
            reverted_epoch: cfg.reverted_epoch(),
            ..Default::default()
        };
        if let Some(v) = &val {
            log.baseline = Some(v.evaluate(&state.grid));
        }
        Ok(Self {
            cfg: cfg.clone(),
            train,
            val,
            state,
            log,
            schedule: Vec::new(),
            position: 0,
            snapshot: None,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn log(&self) -> &StepLog {
        &self.log
    }

    pub fn into_parts(self) -> (TrainState, StepLog) {
        (self.state, self.log)
    }

    pub fn total_steps(&self) -> u64 {
        u64::from(self.cfg.epochs) * self.train.len() as u64
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    fn begin_epoch(&mut self) {
        self.state.epoch += 1;
        let e = self.state.epoch;
        self.schedule = epoch_schedule(self.cfg.seed, e, self.train.len());
        self.position = 0;
        self.state.rng = rng::stream(self.cfg.seed, "rays", u64::from(e));
        self.snapshot = (self.cfg.reverted_epoch() == Some(e))
            .then(|| (self.state.grid.clone(), self.state.optimizer.clone()));
    }

    /// Runs one training step; `None` once every epoch is done.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        if self.position == self.schedule.len() {
            self.begin_epoch();
        }
        let image = self.train[self.schedule[self.position]];
        debug_assert_eq!(image.split, Split::Train);
        self.position += 1;
        let train_loss = train_step(&mut self.state, image, &self.cfg)?;
        let score = match &self.val {
            Some(v) => v.evaluate(&self.state.grid),
            None => ValidationScore {
                psnr: f64::NAN,
                l1: f64::NAN,
            },
        };
        if score.psnr < 0.0 {
            return Err(Error::Diverged {
                step: self.state.step,
                reason: format!("validation PSNR fell to {:.3} dB", score.psnr),
            });
        }
        let rec = StepRecord {
            step: self.state.step,
            epoch: self.state.epoch,
            image_id: image.id,
            train_loss,
            val_psnr: score.psnr,
            val_l1: score.l1,
        };
        self.log.push(rec)?;
        if let Some((grid, opt)) = &self.snapshot {
            self.state.grid.clone_from(grid);
            self.state.optimizer.clone_from(opt);
        }
        Ok(Some(rec))
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn run_training(dataset: &Dataset, cfg: &TrainConfig) -> Result<(TrainState, StepLog)> {
    let mut trainer = Trainer::new(dataset, cfg)?;
    trainer.run()?;
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Camera;
    use crate::metrics::Image;

    fn record(id: u32, split: Split, w: u32, h: u32) -> ImageRecord {
        let camera = Camera::look_at([0.5, -1.2, 0.6], [0.5, 0.5, 0.5], f64::from(w), w, h).unwrap();
        let px = (0..w * h)
            .map(|i| [f64::from(i % 7) / 7.0, 0.3, f64::from(id % 3) / 3.0])
            .collect();
        ImageRecord {
            id,
            image: Image::from_pixels(w, h, px).unwrap(),
            camera,
            split,
            corruption: None,
        }
    }

    #[test]
    fn schedule_is_deterministic_permutation() {
        let a = epoch_schedule(42, 3, 17);
        assert_eq!(a, epoch_schedule(42, 3, 17));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..17).collect::<Vec<_>>());
        assert_ne!(a, epoch_schedule(42, 4, 17));
        assert_eq!(epoch_schedule(1, 1, 1), vec![0]);
    }

    #[test]
    fn pixel_sampling_without_replacement() {
        let rec = record(0, Split::Train, 5, 4);
        let all = sample_pixel_rays(&rec, 20, &mut rng::stream(0, "t", 0)).unwrap();
        let mut px: Vec<_> = all.iter().map(|s| s.pixel).collect();
        px.sort_unstable();
        px.dedup();
        assert_eq!(px.len(), 20);
        let a = sample_pixel_rays(&rec, 7, &mut rng::stream(5, "t", 0)).unwrap();
        let b = sample_pixel_rays(&rec, 7, &mut rng::stream(5, "t", 0)).unwrap();
        assert_eq!(a, b);
        assert!(sample_pixel_rays(&rec, 21, &mut rng::stream(0, "t", 0)).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig {
            grid_dims: [6, 6, 6],
            rays_per_step: 10,
            n_samples_per_ray: 8,
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut state = TrainState::new(&cfg).unwrap();
        let before = state.grid.clone();
        let loss = train_step(&mut state, &record(0, Split::Train, 6, 6), &cfg).unwrap();
        assert!(loss > 0.0);
        assert_eq!(state.grid, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn fixed_state_epoch_is_reverted() {
        let mut records: Vec<_> = (0..3).map(|i| record(i, Split::Train, 6, 6)).collect();
        records.push(record(3, Split::Val, 6, 6));
        let ds = Dataset::new(records, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            grid_dims: [5, 5, 5],
            rays_per_step: 12,
            n_samples_per_ray: 8,
            valuation_resolution_scale: 1.0,
            valuation_mode: ValuationMode::FixedState,
            ..Default::default()
        };
        let mut t = Trainer::new(&ds, &cfg).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        let after_epoch1 = t.state().grid.clone();
        let psnr1 = t.log().records[2].val_psnr;
        for _ in 0..3 {
            t.step().unwrap();
            assert_eq!(t.state().grid, after_epoch1);
        }
        assert!(t.step().unwrap().is_none());
        assert_eq!(t.log().reverted_epoch, Some(2));
        assert!(t.log().records[3..].iter().all(|r| r.val_psnr != psnr1));
    }
}
