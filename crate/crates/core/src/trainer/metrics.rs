use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::JointMetrics;

pub const METRICS_HEADER: &str = "step,lr,mlm_loss,mlm_acc,shuf_loss,shuf_acc,sent_loss,sent_acc";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub mlm_loss: f64,
    pub mlm_acc: f64,
    pub shuf_loss: f64,
    pub shuf_acc: f64,
    pub sent_loss: f64,
    pub sent_acc: f64,
}

impl StepRecord {
    pub fn new(step: usize, lr: f64, m: &JointMetrics) -> Self {
        Self {
            step,
            lr,
            mlm_loss: m.mlm.loss,
            mlm_acc: m.mlm.accuracy(),
            shuf_loss: m.shuffle.loss,
            shuf_acc: m.shuffle.accuracy(),
            sent_loss: m.sentence.loss,
            sent_acc: m.sentence.accuracy(),
        }
    }

    fn fields(&self) -> [f64; 7] {
        [self.lr, self.mlm_loss, self.mlm_acc, self.shuf_loss, self.shuf_acc, self.sent_loss, self.sent_acc]
    }
}

/// Append-only per-step training curve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<StepRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.step <= last.step {
                return Err(Error::InvalidArgument(format!("step {} after {}", r.step, last.step)));
            }
        }
        self.records.push(r);
        Ok(())
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

    /// Mean of `f` over records with `lo <= step <= hi`.
    pub fn mean_over(&self, lo: usize, hi: usize, f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter(|r| (lo..=hi).contains(&r.step)).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Trailing moving average of `f` over `window` records ending at `step`.
    pub fn smoothed(&self, step: usize, window: usize, f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        let end = self.records.iter().position(|r| r.step == step)?;
        let start = (end + 1).saturating_sub(window.max(1));
        let vals = &self.records[start..=end];
        Some(vals.iter().map(f).sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{}", r.step);
            for v in r.fields() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(METRICS_HEADER) {
            return Err(Error::Format("metrics CSV header mismatch".into()));
        }
        let mut log = Self::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(Error::Format(format!("metrics row has {} columns", cols.len())));
            }
            let bad = |_| Error::Format(format!("unparsable metrics row {line:?}"));
            let step = cols[0].parse().map_err(|_| Error::Format(format!("bad step in {line:?}")))?;
            let v: Vec<f64> = cols[1..].iter().map(|c| c.parse::<f64>().map_err(bad)).collect::<Result<_>>()?;
            log.push(StepRecord {
                step,
                lr: v[0],
                mlm_loss: v[1],
                mlm_acc: v[2],
                shuf_loss: v[3],
                shuf_acc: v[4],
                sent_loss: v[5],
                sent_acc: v[6],
            })?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, mlm: f64) -> StepRecord {
        StepRecord { step, lr: 1e-4 * step as f64, mlm_loss: mlm, mlm_acc: 0.5, shuf_loss: 0.0, shuf_acc: 0.0, sent_loss: 1.1, sent_acc: 1.0 / 3.0 }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = MetricsLog::new();
        for s in 1..=5 {
            log.push(rec(s, 7.0 / s as f64)).unwrap();
        }
        let csv = log.to_csv();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(MetricsLog::from_csv(&csv).unwrap(), log);
    }

    #[test]
    fn steps_must_increase() {
        let mut log = MetricsLog::new();
        log.push(rec(3, 1.0)).unwrap();
        assert!(log.push(rec(3, 1.0)).is_err());
        assert!(log.push(rec(2, 1.0)).is_err());
    }

    #[test]
    fn smoothing_window() {
        let mut log = MetricsLog::new();
        for s in 1..=4 {
            log.push(rec(s, s as f64)).unwrap();
        }
        assert_eq!(log.smoothed(4, 2, |r| r.mlm_loss), Some(3.5));
        assert_eq!(log.smoothed(1, 10, |r| r.mlm_loss), Some(1.0));
        assert_eq!(log.mean_over(2, 3, |r| r.mlm_loss), Some(2.5));
        assert_eq!(log.smoothed(9, 2, |r| r.mlm_loss), None);
    }
}
