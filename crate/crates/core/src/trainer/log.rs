use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "step,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Append-only scalar log with non-decreasing step indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<Record>,
    /// Seconds spent in the run; kept out of the CSV so reruns compare equal.
    pub wall_clock_s: f64,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, metric: &str, value: f64) -> Result<()> {
        if let Some(last) = self.records.last() {
            if step < last.step {
                return Err(Error::Precondition(format!(
                    "log step {step} precedes last logged step {}",
                    last.step
                )));
            }
        }
        if metric.contains(',') || metric.contains('\n') {
            return Err(Error::Precondition(format!("metric name {metric:?} is not CSV-safe")));
        }
        self.records.push(Record {
            step,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn series(&self, metric: &str) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }

    pub fn last(&self, metric: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.metric == metric).map(|r| r.value)
    }

    /// Records at `step >= from`.
    pub fn since(&self, from: u64) -> Vec<Record> {
        self.records.iter().filter(|r| r.step >= from).cloned().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.records.len() * 24);
        s.push_str(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            // `{:?}` on f64 prints the shortest string that parses back exactly.
            let _ = writeln!(s, "{},{},{:?}", r.step, r.metric, r.value);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |line: usize, why: &str| Error::MalformedCsv {
            source_name: "log".into(),
            line,
            reason: why.to_string(),
        };
        match lines.next() {
            Some(h) if h.trim() == LOG_HEADER => {}
            _ => return Err(bad(1, "missing `step,metric,value` header")),
        }
        let mut log = Self::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let n = i + 2;
            let mut parts = line.split(',');
            let (Some(step), Some(metric), Some(value), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(n, "expected three fields"));
            };
            let step = step.trim().parse().map_err(|_| bad(n, "step is not an integer"))?;
            let value = value.trim().parse().map_err(|_| bad(n, "value is not a number"))?;
            log.push(step, metric.trim(), value).map_err(|_| bad(n, "step went backwards"))?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| match e {
            Error::MalformedCsv { line, reason, .. } => Error::MalformedCsv {
                source_name: path.display().to_string(),
                line,
                reason,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_must_not_go_backwards() {
        let mut log = TrainLog::new();
        log.push(3, "loss", 1.0).unwrap();
        log.push(3, "alpha", 0.1).unwrap();
        assert!(log.push(2, "loss", 1.0).is_err());
        assert_eq!(log.series("loss"), vec![(3, 1.0)]);
        assert_eq!(log.last("alpha"), Some(0.1));
    }

    #[test]
    fn malformed_csv_names_the_line() {
        let err = TrainLog::from_csv("step,metric,value\n1,loss,0.5\n2,loss\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(TrainLog::from_csv("").is_err());
    }
}
