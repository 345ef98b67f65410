//! Batch entry points for the `radval` binary: dataset generation, valuation
//! runs, score correlation, subset selection, retraining and plot data.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radval::synth::GenerateOptions;
use radval::trainer::ValuationMode;
use radval::valuation::ScoreMetric;

use commands::GenArgs;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "radval", version, about = "Per-image contribution scores for voxel radiance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunFlags {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunFlags {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and write PNGs plus a manifest.
    Gen {
        /// Scene spec JSON; defaults to the built-in scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n_train: usize,
        #[arg(long, default_value_t = 8)]
        n_val: usize,
        #[arg(long, default_value_t = 8)]
        n_test: usize,
        #[arg(long, default_value_t = 64)]
        resolution: u32,
        /// Share of training images given an occluder.
        #[arg(long, default_value_t = 0.25)]
        corrupt_fraction: f64,
        /// Image area covered by each occluder.
        #[arg(long, default_value_t = 0.5)]
        occluder_area: f64,
    },
    /// Train once with per-step validation and write scores.
    Value {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        mode: Option<ValuationMode>,
    },
    /// Pearson correlation of two score files on their common images.
    Correlate {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "dv_psnr")]
        metric: ScoreMetric,
        /// Directory for correlation.json and pairs.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a manifest keeping only training images scored above a threshold.
    Select {
        scores: PathBuf,
        /// Manifest the scores were computed on.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch on the full and the selected training sets.
    Retrain {
        #[command(flatten)]
        run: RunFlags,
        /// Manifest written by `select`.
        #[arg(long)]
        subset: PathBuf,
    },
    /// Plot-ready CSVs from a `value` run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

/// Caps the global thread pool at `RADVAL_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("RADVAL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("RADVAL_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen {
            spec,
            seed,
            out,
            n_train,
            n_val,
            n_test,
            resolution,
            corrupt_fraction,
            occluder_area,
        } => {
            let args = GenArgs {
                spec,
                out_dir: out,
                options: GenerateOptions {
                    n_train,
                    n_val,
                    n_test,
                    resolution,
                    seed,
                    ..GenerateOptions::default()
                },
                corrupt_fraction,
                occluder_area,
            };
            println!("{}", commands::cmd_gen(&args)?.display());
        }
        Command::Value { run, mode } => {
            let mut cfg = run.load()?;
            if let Some(m) = mode {
                cfg.train.valuation_mode = m;
            }
            let summary = commands::cmd_value(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Correlate { a, b, metric, out } => {
            let report = commands::cmd_correlate(&a, &b, metric, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Select {
            scores,
            manifest,
            threshold,
            out,
        } => {
            let (path, keep) = commands::cmd_select(&scores, &manifest, threshold, &out)?;
            println!("{} ({} training images kept)", path.display(), keep.len());
        }
        Command::Retrain { run, subset } => {
            let cfg = run.load()?;
            let rows = commands::cmd_retrain(&cfg, &subset)?;
            print!("{}", commands::format_table(&rows));
        }
        Command::Report { run_dir, out, bins } => {
            let out = out.unwrap_or_else(|| run_dir.join("report"));
            commands::cmd_report(&run_dir, &out, bins)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Exit codes: 0 success, 1 usage
/// error, 2 runtime failure.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
