//! Per-image contribution scores from a [`StepLog`].
//!
//! Each step's validation change is attributed to the image trained on in
//! that step. An image's score sums its deltas over every epoch except the
//! first, where the model is far from converged and any update moves the
//! metrics a lot.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{format_sig9, StepLog, ValuationMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub epoch: u32,
    pub step: u64,
    pub delta_psnr: f64,
    pub delta_l1: f64,
}

/// Per-image time series of attributed validation deltas, ordered by step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreLedger {
    pub entries: BTreeMap<u32, Vec<LedgerEntry>>,
    /// Number of epochs in the source log.
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionScore {
    pub image_id: u32,
    /// Sum of PSNR deltas (dB) over epochs >= 2.
    pub dv_psnr: f64,
    /// Sum of negated L1 deltas over epochs >= 2; larger is better.
    pub dv_loss: f64,
    /// PSNR delta (dB) of the final epoch alone.
    pub dv_last_epoch: f64,
    pub n_appearances: u32,
    /// Set when the image has no entry after epoch 1 and therefore scores 0.
    #[serde(skip)]
    pub flagged: bool,
}

fn check_complete(log: &StepLog) -> Result<()> {
    for (i, r) in log.records.iter().enumerate() {
        let expected = i as u64 + 1;
        if r.step != expected {
            return Err(Error::MissingStep {
                expected,
                found: r.step,
            });
        }
        if r.val_psnr.is_nan() || r.val_l1.is_nan() {
            return Err(Error::invalid(format!(
                "step {} has no validation measurement (eval_every_step was off)",
                r.step
            )));
        }
    }
    Ok(())
}

/// Attributes validation changes to training images.
///
/// - `StepDelta`: value after the step minus value before it. The first step
///   is measured against the untrained baseline; inside a reverted epoch the
///   "before" value is the snapshot's.
/// - `RevisitDelta`: value after this appearance minus value after the
///   image's previous appearance; first appearances get 0.
/// - `FixedState`: the `StepDelta` entries of the reverted epoch only.
pub fn deltas_from_log(log: &StepLog, mode: ValuationMode) -> Result<ScoreLedger> {
    check_complete(log)?;
    let mut ledger = ScoreLedger {
        entries: BTreeMap::new(),
        epochs: log.epochs(),
    };
    match mode {
        ValuationMode::StepDelta | ValuationMode::FixedState => {
            let baseline = log
                .baseline
                .ok_or_else(|| Error::invalid("step log has no baseline evaluation"))?;
            let keep_epoch = match mode {
                ValuationMode::FixedState => Some(log.reverted_epoch.ok_or_else(|| {
                    Error::invalid("fixed_state scores need a log with a reverted epoch")
                })?),
                _ => None,
            };
            let (mut prev_psnr, mut prev_l1) = (baseline.psnr, baseline.l1);
            for r in &log.records {
                if keep_epoch.is_none_or(|e| e == r.epoch) {
                    ledger.entries.entry(r.image_id).or_default().push(LedgerEntry {
                        epoch: r.epoch,
                        step: r.step,
                        delta_psnr: r.val_psnr - prev_psnr,
                        delta_l1: r.val_l1 - prev_l1,
                    });
                }
                if log.reverted_epoch != Some(r.epoch) {
                    prev_psnr = r.val_psnr;
                    prev_l1 = r.val_l1;
                }
            }
        }
        ValuationMode::RevisitDelta => {
            let mut last: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
            for r in &log.records {
                let (dp, dl) = match last.get(&r.image_id) {
                    Some(&(p, l)) => (r.val_psnr - p, r.val_l1 - l),
                    None => (0.0, 0.0),
                };
                last.insert(r.image_id, (r.val_psnr, r.val_l1));
                ledger.entries.entry(r.image_id).or_default().push(LedgerEntry {
                    epoch: r.epoch,
                    step: r.step,
                    delta_psnr: dp,
                    delta_l1: dl,
                });
            }
        }
    }
    Ok(ledger)
}

/// Aggregates a ledger into one score per image, ordered by image id.
pub fn dv_psnr(ledger: &ScoreLedger) -> Result<Vec<ContributionScore>> {
    if ledger.epochs < 2 {
        return Err(Error::TooFewEpochs(ledger.epochs));
    }
    Ok(ledger
        .entries
        .iter()
        .map(|(&image_id, entries)| {
            let mut sorted = entries.clone();
            sorted.sort_by_key(|e| e.step);
            let mut score = ContributionScore {
                image_id,
                dv_psnr: 0.0,
                dv_loss: 0.0,
                dv_last_epoch: 0.0,
                n_appearances: sorted.len() as u32,
                flagged: true,
            };
            for e in &sorted {
                if e.epoch >= 2 {
                    score.dv_psnr += e.delta_psnr;
                    score.dv_loss -= e.delta_l1;
                    score.flagged = false;
                }
                if e.epoch == ledger.epochs {
                    score.dv_last_epoch += e.delta_psnr;
                }
            }
            score
        })
        .collect())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    DvPsnr,
    DvLoss,
    DvLastEpoch,
}

impl ScoreMetric {
    pub fn get(self, s: &ContributionScore) -> f64 {
        match self {
            ScoreMetric::DvPsnr => s.dv_psnr,
            ScoreMetric::DvLoss => s.dv_loss,
            ScoreMetric::DvLastEpoch => s.dv_last_epoch,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreMetric::DvPsnr => "dv_psnr",
            ScoreMetric::DvLoss => "dv_loss",
            ScoreMetric::DvLastEpoch => "dv_last_epoch",
        }
    }
}

impl std::str::FromStr for ScoreMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dv_psnr" => Ok(Self::DvPsnr),
            "dv_loss" => Ok(Self::DvLoss),
            "dv_last_epoch" => Ok(Self::DvLastEpoch),
            other => Err(Error::invalid(format!("unknown score metric {other:?}"))),
        }
    }
}

/// `(image_id, a, b)` for every image present in both score sets.
pub fn paired_scores(
    a: &[ContributionScore],
    b: &[ContributionScore],
    metric: ScoreMetric,
) -> Result<Vec<(u32, f64, f64)>> {
    let bmap: BTreeMap<u32, f64> = b.iter().map(|s| (s.image_id, metric.get(s))).collect();
    let mut pairs: Vec<(u32, f64, f64)> = a
        .iter()
        .filter_map(|s| bmap.get(&s.image_id).map(|&y| (s.image_id, metric.get(s), y)))
        .collect();
    pairs.sort_by_key(|p| p.0);
    if pairs.is_empty() {
        return Err(Error::NoCommonImages);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub n: usize,
    pub pearson: f64,
}

pub fn correlate(
    a: &[ContributionScore],
    b: &[ContributionScore],
    metric: ScoreMetric,
) -> Result<(CorrelationReport, Vec<(u32, f64, f64)>)> {
    let pairs = paired_scores(a, b, metric)?;
    let x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let report = CorrelationReport {
        metric: metric.name().into(),
        n: pairs.len(),
        pearson: pearson(&x, &y)?,
    };
    Ok((report, pairs))
}

/// Ids with `dv_psnr > threshold`, best first, ties by ascending id.
pub fn select_positive(scores: &[ContributionScore], threshold: f64) -> Vec<u32> {
    let mut picked: Vec<&ContributionScore> =
        scores.iter().filter(|s| s.dv_psnr > threshold).collect();
    picked.sort_by(|a, b| b.dv_psnr.total_cmp(&a.dv_psnr).then(a.image_id.cmp(&b.image_id)));
    picked.into_iter().map(|s| s.image_id).collect()
}

/// Probability that a random `high` score exceeds a random `low` score, ties
/// counted half (Mann-Whitney AUC).
pub fn rank_auc(high: &[f64], low: &[f64]) -> Result<f64> {
    if high.is_empty() || low.is_empty() {
        return Err(Error::invalid("AUC needs both groups non-empty"));
    }
    let mut wins = 0.0;
    for &h in high {
        for &l in low {
            if h > l {
                wins += 1.0;
            } else if h == l {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (high.len() * low.len()) as f64)
}

pub const SCORES_HEADER: [&str; 5] = ["image_id", "dv_psnr", "dv_loss", "dv_last_epoch", "n_appearances"];
pub const LEDGER_HEADER: [&str; 5] = ["image_id", "epoch", "step", "delta_psnr", "delta_l1"];

pub fn write_scores_csv(scores: &[ContributionScore], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SCORES_HEADER)?;
    for s in scores {
        wr.write_record([
            s.image_id.to_string(),
            format_sig9(s.dv_psnr),
            format_sig9(s.dv_loss),
            format_sig9(s.dv_last_epoch),
            s.n_appearances.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<scores>", e))
}

pub fn read_scores_csv(r: impl Read) -> Result<Vec<ContributionScore>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != SCORES_HEADER {
        return Err(Error::format("scores", format!("unexpected header {header:?}")));
    }
    rd.records()
        .map(|row| {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row[i]
                    .parse()
                    .map_err(|_| Error::format("scores", format!("bad number {:?}", &row[i])))
            };
            Ok(ContributionScore {
                image_id: row[0]
                    .parse()
                    .map_err(|_| Error::format("scores", format!("bad image id {:?}", &row[0])))?,
                dv_psnr: num(1)?,
                dv_loss: num(2)?,
                dv_last_epoch: num(3)?,
                n_appearances: row[4]
                    .parse()
                    .map_err(|_| Error::format("scores", format!("bad count {:?}", &row[4])))?,
                flagged: false,
            })
        })
        .collect()
}

pub fn save_scores(scores: &[ContributionScore], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores_csv(scores, std::io::BufWriter::new(f))
}

pub fn load_scores(path: &Path) -> Result<Vec<ContributionScore>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores_csv(f)
}

pub fn write_ledger_csv(ledger: &ScoreLedger, w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(LEDGER_HEADER)?;
    for (id, entries) in &ledger.entries {
        for e in entries {
            wr.write_record([
                id.to_string(),
                e.epoch.to_string(),
                e.step.to_string(),
                format_sig9(e.delta_psnr),
                format_sig9(e.delta_l1),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<ledger>", e))
}
