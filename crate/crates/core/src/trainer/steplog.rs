use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ValidationScore;

pub const STEPLOG_HEADER: [&str; 6] = ["step", "epoch", "image_id", "train_loss", "val_psnr", "val_l1"];

/// One training step: which image was used and the validation metrics right
/// after its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u32,
    pub image_id: u32,
    pub train_loss: f64,
    pub val_psnr: f64,
    pub val_l1: f64,
}

/// Append-only per-step log. Steps are numbered from 1; `baseline` is the
/// validation score of the untrained model. When `reverted_epoch` is set,
/// every step of that epoch was undone after its measurement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepLog {
    pub baseline: Option<ValidationScore>,
    pub records: Vec<StepRecord>,
    pub reverted_epoch: Option<u32>,
}

/// Decimal rendering with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn parse_f64(field: &str, what: &'static str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::format(what, format!("bad number {field:?}")))
}

impl StepLog {
    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.step <= last.step {
                return Err(Error::invalid(format!(
                    "step {} does not follow step {}",
                    rec.step, last.step
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn epochs(&self) -> u32 {
        self.records.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    pub fn last_score(&self) -> Option<ValidationScore> {
        self.records
            .last()
            .map(|r| ValidationScore {
                psnr: r.val_psnr,
                l1: r.val_l1,
            })
            .or(self.baseline)
    }

    /// `step,epoch,image_id,train_loss,val_psnr,val_l1`; the baseline is the
    /// step-0 row with empty image id and loss.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(STEPLOG_HEADER)?;
        if let Some(b) = self.baseline {
            wr.write_record(["0", "0", "", "", &format_sig9(b.psnr), &format_sig9(b.l1)])?;
        }
        for r in &self.records {
            wr.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                r.image_id.to_string(),
                format_sig9(r.train_loss),
                format_sig9(r.val_psnr),
                format_sig9(r.val_l1),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<steplog>", e))
    }

    pub fn read_csv(r: impl Read, reverted_epoch: Option<u32>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != STEPLOG_HEADER {
            return Err(Error::format("step log", format!("unexpected header {header:?}")));
        }
        let mut log = StepLog {
            reverted_epoch,
            ..Default::default()
        };
        for row in rd.records() {
            let row = row?;
            let step: u64 = row[0]
                .parse()
                .map_err(|_| Error::format("step log", format!("bad step {:?}", &row[0])))?;
            if step == 0 {
                log.baseline = Some(ValidationScore {
                    psnr: parse_f64(&row[4], "step log")?,
                    l1: parse_f64(&row[5], "step log")?,
                });
                continue;
            }
            log.push(StepRecord {
                step,
                epoch: row[1]
                    .parse()
                    .map_err(|_| Error::format("step log", format!("bad epoch {:?}", &row[1])))?,
                image_id: row[2]
                    .parse()
                    .map_err(|_| Error::format("step log", format!("bad image id {:?}", &row[2])))?,
                train_loss: parse_f64(&row[3], "step log")?,
                val_psnr: parse_f64(&row[4], "step log")?,
                val_l1: parse_f64(&row[5], "step log")?,
            })?;
        }
        Ok(log)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path, reverted_epoch: Option<u32>) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, reverted_epoch)
    }
}
