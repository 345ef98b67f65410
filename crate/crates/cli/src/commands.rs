use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use radval::metrics::ValidationSet;
use radval::synth::{
    generate_dataset, load_dataset, write_dataset, CorruptionPlan, Dataset, DatasetManifest,
    GenerateOptions, SceneSpec, Split,
};
use radval::trainer::{save_checkpoint, StepLog, Trainer, ValuationMode};
use radval::valuation::{
    correlate, deltas_from_log, dv_psnr, load_scores, save_scores, select_positive,
    write_ledger_csv, ContributionScore, CorrelationReport, ScoreMetric,
};
use radval::{TrainConfig, VoxelGrid};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const STEPLOG_FILE: &str = "steplog.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoint";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct GenArgs {
    /// Scene spec JSON; the built-in scene when absent.
    pub spec: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub options: GenerateOptions,
    /// Share of training images that get an occluder.
    pub corrupt_fraction: f64,
    /// Image area each occluder covers.
    pub occluder_area: f64,
}

impl GenArgs {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            spec: None,
            out_dir: out_dir.into(),
            options: GenerateOptions::default(),
            corrupt_fraction: 0.25,
            occluder_area: 0.5,
        }
    }
}

/// Generates a dataset and returns its manifest path.
pub fn cmd_gen(args: &GenArgs) -> Result<PathBuf> {
    let spec = match &args.spec {
        Some(path) => SceneSpec::load(path)
            .with_context(|| format!("cannot load scene spec {}", path.display()))?,
        None => SceneSpec::default(),
    };
    if !(0.0..=1.0).contains(&args.corrupt_fraction) {
        bail!("corrupt fraction must be in [0,1]");
    }
    let opts = &args.options;
    let plan = if args.corrupt_fraction > 0.0 {
        CorruptionPlan::random_occluders(
            opts.n_train,
            args.corrupt_fraction,
            args.occluder_area,
            opts.seed,
        )
    } else {
        CorruptionPlan::none()
    };
    let dataset = generate_dataset(&spec, opts, &plan)?;
    create_dir(&args.out_dir)?;
    Ok(write_dataset(&dataset, &spec, &args.out_dir)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub mode: ValuationMode,
    pub n_train: usize,
    pub steps: u64,
    pub baseline_val_psnr: f64,
    pub final_val_psnr: f64,
    pub test_psnr: f64,
    pub wall_time_s: f64,
}

/// Full-resolution PSNR of `grid` on one split.
pub fn split_psnr(grid: &VoxelGrid, dataset: &Dataset, split: Split, cfg: &TrainConfig) -> Result<f64> {
    let records = dataset.split(split);
    let set = ValidationSet::new(&records, 1.0, cfg.n_samples_per_ray, cfg.metric)?;
    Ok(set.evaluate(grid).psnr)
}

/// Trains, values every training image, and writes the run artifacts into
/// `cfg.out_dir`. On a training failure the StepLog so far is still written.
pub fn cmd_value(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (dataset, _) = load_dataset(&cfg.manifest)
        .with_context(|| format!("cannot load dataset {}", cfg.manifest.display()))?;
    value_dataset(&dataset, cfg)
}

pub fn value_dataset(dataset: &Dataset, cfg: &RunConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let out = &cfg.out_dir;
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let train = &cfg.train;
    let mut trainer = Trainer::new(dataset, train)?;
    let steplog_path = out.join(STEPLOG_FILE);
    if let Err(e) = trainer.run() {
        trainer.log().save_csv(&steplog_path)?;
        return Err(anyhow::Error::new(e).context(format!(
            "training failed; partial log in {}",
            steplog_path.display()
        )));
    }
    let (state, log) = trainer.into_parts();
    log.save_csv(&steplog_path)?;

    let ledger = deltas_from_log(&log, train.valuation_mode)?;
    let mut buf = Vec::new();
    write_ledger_csv(&ledger, &mut buf)?;
    write_file(&out.join(LEDGER_FILE), buf)?;
    let scores = dv_psnr(&ledger)?;
    save_scores(&scores, &out.join(SCORES_FILE))?;
    save_checkpoint(&state, &out.join(CHECKPOINT_DIR), "final")?;

    let summary = RunSummary {
        config_hash: cfg.hash(),
        seed: train.seed,
        mode: train.valuation_mode,
        n_train: dataset.train().len(),
        steps: state.step,
        baseline_val_psnr: log.baseline.map_or(f64::NAN, |b| b.psnr),
        final_val_psnr: log.last_score().map_or(f64::NAN, |s| s.psnr),
        test_psnr: split_psnr(&state.grid, dataset, Split::Test, train)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_file(
        &out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

/// Correlates two score files on their common images. When `out_dir` is
/// given, writes `correlation.json` and `pairs.csv` there.
pub fn cmd_correlate(
    a: &Path,
    b: &Path,
    metric: ScoreMetric,
    out_dir: Option<&Path>,
) -> Result<CorrelationReport> {
    let sa = load_scores(a)?;
    let sb = load_scores(b)?;
    let (report, pairs) = correlate(&sa, &sb, metric)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_file(
            &dir.join("correlation.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        let mut csv = String::from("image_id,x,y\n");
        for (id, x, y) in &pairs {
            writeln!(csv, "{id},{x},{y}")?;
        }
        write_file(&dir.join("pairs.csv"), csv)?;
    }
    Ok(report)
}

/// Writes `manifest.json` into `out_dir` keeping only the training images
/// whose score exceeds `threshold`. Returns the new manifest path and the
/// kept ids, best first.
pub fn cmd_select(
    scores_path: &Path,
    manifest_path: &Path,
    threshold: f64,
    out_dir: &Path,
) -> Result<(PathBuf, Vec<u32>)> {
    let scores = load_scores(scores_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let train_ids: Vec<u32> = manifest
        .images
        .iter()
        .filter(|m| m.split == Split::Train)
        .map(|m| m.id)
        .collect();
    if let Some(s) = scores.iter().find(|s| !train_ids.contains(&s.image_id)) {
        bail!(
            "score for image {} which is not a training image of {}",
            s.image_id,
            manifest_path.display()
        );
    }
    let keep = select_positive(&scores, threshold);
    create_dir(out_dir)?;
    let from = canonical_parent(manifest_path)?;
    let to = out_dir
        .canonicalize()
        .with_context(|| format!("cannot resolve {}", out_dir.display()))?;
    let subset = manifest.with_train_subset(&keep).relocated(&from, &to);
    let path = out_dir.join("manifest.json");
    subset.save(&path)?;
    Ok((path, keep))
}

fn canonical_parent(path: &Path) -> Result<PathBuf> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    parent
        .canonicalize()
        .with_context(|| format!("cannot resolve {}", parent.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRow {
    pub variant: String,
    pub val_psnr: f64,
    pub test_psnr: f64,
    pub n_train: usize,
}

/// Trains from scratch with `train` (no per-step validation, no reverts) and
/// reports full-resolution validation and test PSNR.
pub fn retrain_row(dataset: &Dataset, train: &TrainConfig, variant: &str) -> Result<RetrainRow> {
    let cfg = TrainConfig {
        eval_every_step: false,
        valuation_mode: ValuationMode::StepDelta,
        ..train.clone()
    };
    let mut trainer = Trainer::new(dataset, &cfg)?;
    trainer.run()?;
    let (state, _) = trainer.into_parts();
    Ok(RetrainRow {
        variant: variant.into(),
        val_psnr: split_psnr(&state.grid, dataset, Split::Val, &cfg)?,
        test_psnr: split_psnr(&state.grid, dataset, Split::Test, &cfg)?,
        n_train: dataset.train().len(),
    })
}

pub fn format_table(rows: &[RetrainRow]) -> String {
    let mut s = String::from("| training set | n_train | val PSNR | test PSNR |\n|---|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.2} | {:.2} |",
            r.variant, r.n_train, r.val_psnr, r.test_psnr
        );
    }
    s
}

/// Trains on the full training set of `cfg.manifest` and on the training set
/// of `subset_manifest` with identical settings, then writes `retrain.json`
/// and `retrain.md` into `cfg.out_dir`.
pub fn cmd_retrain(cfg: &RunConfig, subset_manifest: &Path) -> Result<Vec<RetrainRow>> {
    cfg.validate()?;
    let (full, _) = load_dataset(&cfg.manifest)
        .with_context(|| format!("cannot load dataset {}", cfg.manifest.display()))?;
    let (subset, _) = load_dataset(subset_manifest)
        .with_context(|| format!("cannot load dataset {}", subset_manifest.display()))?;
    let same_ids = |s: Split| {
        let ids = |d: &Dataset| d.split(s).iter().map(|r| r.id).collect::<Vec<_>>();
        ids(&full) == ids(&subset)
    };
    if !same_ids(Split::Val) || !same_ids(Split::Test) {
        bail!("subset manifest must keep the validation and test images of the full manifest");
    }
    let rows = vec![
        retrain_row(&full, &cfg.train, "full")?,
        retrain_row(&subset, &cfg.train, "selected")?,
    ];
    create_dir(&cfg.out_dir)?;
    write_file(
        &cfg.out_dir.join("retrain.json"),
        serde_json::to_string_pretty(&rows)? + "\n",
    )?;
    write_file(&cfg.out_dir.join("retrain.md"), format_table(&rows))?;
    Ok(rows)
}

/// Counts per bin over `[min, max]`; the top edge belongs to the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// Writes `curve.csv`, `histogram.csv` and `scatter.csv` for a run directory
/// produced by [`cmd_value`].
pub fn cmd_report(run_dir: &Path, out_dir: &Path, bins: usize) -> Result<()> {
    let cfg_path = run_dir.join(CONFIG_FILE);
    let reverted = match RunConfig::load(&cfg_path) {
        Ok(c) => c.train.reverted_epoch(),
        Err(_) => None,
    };
    let log = StepLog::load_csv(&run_dir.join(STEPLOG_FILE), reverted)?;
    let scores: Vec<ContributionScore> = load_scores(&run_dir.join(SCORES_FILE))?;
    create_dir(out_dir)?;

    let mut curve = String::from("step,epoch,val_psnr,val_l1\n");
    if let Some(b) = log.baseline {
        writeln!(curve, "0,0,{},{}", b.psnr, b.l1)?;
    }
    for r in &log.records {
        writeln!(curve, "{},{},{},{}", r.step, r.epoch, r.val_psnr, r.val_l1)?;
    }
    write_file(&out_dir.join("curve.csv"), curve)?;

    let values: Vec<f64> = scores.iter().map(|s| s.dv_psnr).collect();
    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (lo, hi, c) in histogram(&values, bins) {
        writeln!(hist, "{lo},{hi},{c}")?;
    }
    write_file(&out_dir.join("histogram.csv"), hist)?;

    let mut scatter = String::from("image_id,dv_psnr,dv_loss\n");
    for s in &scores {
        writeln!(scatter, "{},{},{}", s.image_id, s.dv_psnr, s.dv_loss)?;
    }
    write_file(&out_dir.join("scatter.csv"), scatter)?;
    Ok(())
}
