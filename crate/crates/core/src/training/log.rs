use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub total: f64,
    pub dist: f64,
    pub cls_hr: f64,
    pub cls_lr: f64,
    pub lr: f64,
    /// Joint gradient norm before clipping.
    pub grad_norm: f64,
    /// Sampled resolutions as `r:count` pairs joined by `;`.
    pub resolutions: String,
}

impl StepRecord {
    pub fn resolution_counts(&self) -> Vec<(usize, usize)> {
        self.resolutions
            .split(';')
            .filter_map(|item| {
                let (r, c) = item.split_once(':')?;
                Some((r.parse().ok()?, c.parse().ok()?))
            })
            .collect()
    }
}

/// Append-only step log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    records: Vec<StepRecord>,
}

impl TrainLog {
    /// Panics if `rec.step` does not follow the last record.
    pub fn push(&mut self, rec: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.step > last.step, "step ids must increase");
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean total loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some((e, sum, n)) if *e == r.epoch => {
                    *sum += r.total;
                    *n += 1;
                }
                _ => out.push((r.epoch, r.total, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            log.push(serde_json::from_str(line)?);
        }
        Ok(log)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.records.is_empty() {
            w.write_record(["epoch", "step", "total", "dist", "cls_hr", "cls_lr", "lr", "grad_norm", "resolutions"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Write `<stem>.jsonl` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.jsonl")), self.to_jsonl()?.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())
    }
}
