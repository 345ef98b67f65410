//! End-to-end acceptance checks on the default synthetic dataset.
//!
//! Every check writes one `criterion N: PASS|FAIL ...` line to stderr, which
//! the test harness does not capture, and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use radval::field::{intersect_unit_cube, render_ray, render_ray_backward, Ray, VoxelGrid};
use radval::metrics::{l1_loss, mse, psnr, Image, MetricConfig};
use radval::synth::DatasetManifest;
use radval::trainer::{StepLog, TrainConfig, ValuationMode};
use radval::valuation::{
    deltas_from_log, load_scores, pearson, rank_auc, ContributionScore,
};
use radval_cli::commands::{cmd_gen, cmd_retrain, cmd_select, cmd_value, GenArgs, SCORES_FILE, STEPLOG_FILE};
use radval_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} ({detail})");
}

struct Data {
    root: PathBuf,
    corrupted: PathBuf,
    clean: PathBuf,
}

fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let _ = std::fs::remove_dir_all(&root);
        let corrupted = cmd_gen(&GenArgs::new(root.join("corrupted"))).unwrap();
        let clean = cmd_gen(&GenArgs {
            corrupt_fraction: 0.0,
            ..GenArgs::new(root.join("clean"))
        })
        .unwrap();
        Data {
            root,
            corrupted,
            clean,
        }
    })
}

/// Runs `cmd_value` once per distinct name and returns the run directory.
fn run(name: &str, manifest: &Path, train: TrainConfig) -> PathBuf {
    static RUNS: Mutex<BTreeMap<String, PathBuf>> = Mutex::new(BTreeMap::new());
    let mut runs = RUNS.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(dir) = runs.get(name) {
        return dir.clone();
    }
    let dir = data().root.join("runs").join(name);
    cmd_value(&RunConfig::new(manifest, &dir, train)).unwrap();
    runs.insert(name.into(), dir.clone());
    dir
}

fn config(seed: u64, rays: usize, mode: ValuationMode) -> TrainConfig {
    TrainConfig {
        seed,
        rays_per_step: rays,
        valuation_mode: mode,
        ..TrainConfig::default()
    }
}

fn default_run(seed: u64) -> PathBuf {
    run(&format!("step-{seed}"), &data().corrupted, config(seed, 500, ValuationMode::StepDelta))
}

fn scores(dir: &Path) -> Vec<ContributionScore> {
    load_scores(&dir.join(SCORES_FILE)).unwrap()
}

fn dv(dir: &Path) -> Vec<f64> {
    let mut s = scores(dir);
    s.sort_by_key(|s| s.image_id);
    s.iter().map(|s| s.dv_psnr).collect()
}

fn corrupted_ids() -> Vec<u32> {
    DatasetManifest::load(&data().corrupted)
        .unwrap()
        .images
        .iter()
        .filter(|m| m.corruption.is_some())
        .map(|m| m.id)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// 1

fn random_case(rng: &mut impl Rng) -> (VoxelGrid, Ray, [f64; 3]) {
    let raw = (0..64)
        .map(|_| {
            [
                rng.random_range(-3.0..2.5),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]
        })
        .collect();
    let grid = VoxelGrid::from_raw([4, 4, 4], raw).unwrap();
    loop {
        let origin: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..1.6));
        let target: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let d: [f64; 3] = std::array::from_fn(|k| target[k] - origin[k]);
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let direction = d.map(|v| v / len);
        let (t_near, t_far) = intersect_unit_cube(origin, direction);
        if t_far - t_near > 0.05 {
            let ray = Ray {
                origin,
                direction,
                t_near,
                t_far,
            };
            let w = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            return (grid, ray, w);
        }
    }
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    const H: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let f = |g: &VoxelGrid, ray: &Ray, w: [f64; 3]| {
        let c = render_ray(g, ray, 24).rgb;
        c[0] * w[0] + c[1] * w[1] + c[2] * w[2]
    };
    let mut worst: f64 = 0.0;
    let cases = 120;
    for _ in 0..cases {
        let (grid, ray, w) = random_case(&mut rng);
        let analytic = render_ray_backward(&grid, &ray, 24, w);
        let mut g = grid.clone();
        for cell in 0..grid.len() {
            let base = grid.raw_cell(cell);
            for q in 0..4 {
                let mut p = base;
                p[q] += H;
                g.set_raw(cell, p);
                let up = f(&g, &ray, w);
                p[q] = base[q] - H;
                g.set_raw(cell, p);
                let down = f(&g, &ray, w);
                g.set_raw(cell, base);
                let numeric = (up - down) / (2.0 * H);
                let a = analytic.get(cell)[q];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 10.0;
    report("1", pass, format!("{cases} cases, max rel err {worst:.2e}, {secs:.1} s"));
    assert!(pass);
}

// 2

#[test]
fn criterion_2_metric_fixtures() {
    let a = Image::from_pixels(2, 2, vec![[0.0; 3], [1.0; 3], [0.5; 3], [0.2, 0.4, 0.6]]).unwrap();
    let b = Image::from_pixels(2, 2, vec![[0.1; 3], [0.8; 3], [0.5; 3], [0.2, 0.1, 0.9]]).unwrap();
    // per pixel abs diffs: 0.1, 0.2, 0, (0, 0.3, 0.3)
    let want_l1: f64 = (3.0 * 0.1 + 3.0 * 0.2 + 0.6) / 12.0;
    let want_mse: f64 = (3.0 * 0.01 + 3.0 * 0.04 + 2.0 * 0.09) / 12.0;
    let cfg = MetricConfig::default();
    let want_psnr = -10.0 * want_mse.log10();
    let flat = Image::filled(2, 2, [0.5; 3]);
    let off = Image::filled(2, 2, [0.6; 3]);
    let errs = [
        (l1_loss(&a, &b).unwrap() - want_l1).abs(),
        (mse(&a, &b).unwrap() - want_mse).abs(),
        (psnr(&a, &b, &cfg).unwrap() - want_psnr).abs(),
        (cfg.psnr_from_mse(0.01) - 20.0).abs(),
        (psnr(&flat, &off, &cfg).unwrap() - 20.0).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let pass = worst <= 1e-12;
    report("2", pass, format!("max abs err {worst:.1e}"));
    assert!(pass);
}

// 3

#[test]
fn criterion_3_step_deltas_telescope() {
    let mut worst: f64 = 0.0;
    for seed in [0, 1] {
        let log = StepLog::load_csv(&default_run(seed).join(STEPLOG_FILE), None).unwrap();
        let ledger = deltas_from_log(&log, ValuationMode::StepDelta).unwrap();
        let total: f64 = ledger.entries.values().flatten().map(|e| e.delta_psnr).sum();
        let span = log.records.last().unwrap().val_psnr - log.baseline.unwrap().psnr;
        worst = worst.max((total - span).abs());
    }
    let pass = worst < 1e-6;
    report("3", pass, format!("max |sum - span| {worst:.1e} dB over 2 runs"));
    assert!(pass);
}

// 4

#[test]
fn criterion_4_value_runs_are_byte_identical() {
    let a = default_run(0);
    let b = run("step-0-again", &data().corrupted, config(0, 500, ValuationMode::StepDelta));
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let (log, sc) = (same(STEPLOG_FILE), same(SCORES_FILE));
    report("4", log && sc, format!("steplog identical {log}, scores identical {sc}"));
    assert!(log && sc);
}

// 5

#[test]
fn criterion_5_scores_reproduce_across_seeds() {
    let r500 = pearson(&dv(&default_run(0)), &dv(&default_run(1))).unwrap();
    let few = |seed| run(&format!("rays100-{seed}"), &data().corrupted, config(seed, 100, ValuationMode::StepDelta));
    let r100 = pearson(&dv(&few(0)), &dv(&few(1))).unwrap();
    let pass = r500 >= 0.6 && r100 <= r500;
    report("5", pass, format!("pearson 500 rays {r500:.4} (>= 0.6), 100 rays {r100:.4} (<= 500-ray)"));
    assert!(pass);
}

// 6

#[test]
fn criterion_6_corrupted_images_score_lower() {
    let bad = corrupted_ids();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let s = scores(&default_run(seed));
        let (low, high): (Vec<_>, Vec<_>) = s.iter().partition(|s| bad.contains(&s.image_id));
        let low: Vec<f64> = low.iter().map(|s| s.dv_psnr).collect();
        let high: Vec<f64> = high.iter().map(|s| s.dv_psnr).collect();
        let auc = rank_auc(&high, &low).unwrap();
        let (mb, mg) = (mean(&low), mean(&high));
        ok &= auc >= 0.8 && mb < mg;
        parts.push(format!("seed {seed}: auc {auc:.3}, mean corrupted {mb:.3} vs clean {mg:.3}"));
    }
    report("6", ok, parts.join("; "));
    assert!(ok);
}

// 7

fn retrain_gain(name: &str, manifest: &Path, value_dir: &Path, seed: u64) -> (f64, usize) {
    let dir = data().root.join("retrain").join(name);
    let (subset, keep) = cmd_select(&value_dir.join(SCORES_FILE), manifest, 0.0, &dir.join("subset")).unwrap();
    let cfg = RunConfig::new(manifest, &dir, config(seed, 500, ValuationMode::StepDelta));
    let rows = cmd_retrain(&cfg, &subset).unwrap();
    (rows[1].test_psnr - rows[0].test_psnr, keep.len())
}

#[test]
fn criterion_7_selected_subsets_do_not_hurt() {
    let mut gains = Vec::new();
    for seed in 0..3 {
        let (g, n) = retrain_gain(&format!("corrupted-{seed}"), &data().corrupted, &default_run(seed), seed);
        gains.push((g, n));
    }
    let clean_run = run("clean-0", &data().clean, config(0, 500, ValuationMode::StepDelta));
    let (clean_gain, clean_n) = retrain_gain("clean-0", &data().clean, &clean_run, 0);
    let never_worse = gains.iter().all(|(g, _)| *g >= 0.0);
    let clear_wins = gains.iter().filter(|(g, _)| *g >= 0.2).count();
    let pass = never_worse && clear_wins >= 2 && clean_gain >= -0.1;
    let detail: Vec<String> = gains
        .iter()
        .enumerate()
        .map(|(s, (g, n))| format!("seed {s}: {g:+.3} dB with {n} kept"))
        .collect();
    report(
        "7",
        pass,
        format!(
            "{}; clean: {clean_gain:+.3} dB with {clean_n} kept (>= -0.1)",
            detail.join("; ")
        ),
    );
    assert!(pass);
}

// 8

#[test]
fn criterion_8_fixed_state_scores_are_less_stable() {
    let fixed = |seed| run(&format!("fixed-{seed}"), &data().corrupted, config(seed, 500, ValuationMode::FixedState));
    let r_fixed = pearson(&dv(&fixed(0)), &dv(&fixed(1))).unwrap();
    let r_step = pearson(&dv(&default_run(0)), &dv(&default_run(1))).unwrap();
    let pass = r_fixed < r_step;
    report("8", pass, format!("pearson fixed_state {r_fixed:.4} vs step_delta {r_step:.4}"));
    assert!(pass);
}

// 9

#[test]
fn criterion_9_first_epoch_moves_validation_most() {
    let log = StepLog::load_csv(&default_run(0).join(STEPLOG_FILE), None).unwrap();
    let ledger = deltas_from_log(&log, ValuationMode::StepDelta).unwrap();
    let epoch_mean = |epoch: u32| {
        let v: Vec<f64> = ledger
            .entries
            .values()
            .flatten()
            .filter(|e| e.epoch == epoch)
            .map(|e| e.delta_psnr.abs())
            .collect();
        mean(&v)
    };
    let (first, last) = (epoch_mean(1), epoch_mean(ledger.epochs));
    let pass = first > last;
    report("9", pass, format!("mean |delta| epoch 1 {first:.4} dB, final epoch {last:.4} dB"));
    assert!(pass);
}
