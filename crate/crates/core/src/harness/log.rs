//! JSON-lines metric log.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MooreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Adapt,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Metric {
    Loss,
    Accuracy,
    RangeResidual,
}

/// One event. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub step: u64,
    pub phase: Phase,
    pub task: String,
    pub metric: Metric,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub records: Vec<MetricRecord>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, phase: Phase, task: &str, metric: Metric, value: f64, seed: u64) {
        log::debug!("{phase:?} step {step} {task} {metric:?} = {value}");
        self.records.push(MetricRecord {
            step,
            phase,
            task: task.to_string(),
            metric,
            value,
            seed,
        });
    }

    /// Records matching `phase` and `metric`, in log order.
    pub fn select(&self, phase: Phase, metric: Metric) -> impl Iterator<Item = &MetricRecord> {
        self.records
            .iter()
            .filter(move |r| r.phase == phase && r.metric == metric)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_log(&mut out, &self.records).expect("writing to a Vec cannot fail");
        out
    }
}

pub fn write_log<W: Write>(w: &mut W, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSON-lines log; blank lines are skipped.
pub fn read_log<R: Read>(r: R) -> Result<MetricLog> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricRecord = serde_json::from_str(&line)
            .map_err(|e| MooreError::Format(format!("metric log line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok(MetricLog { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let mut log = MetricLog::new();
        log.push(3, Phase::Eval, "A0", Metric::RangeResidual, 0.5, 42);
        let text = String::from_utf8(log.to_jsonl()).unwrap();
        assert_eq!(
            text,
            "{\"step\":3,\"phase\":\"eval\",\"task\":\"A0\",\"metric\":\"rangeResidual\",\"value\":0.5,\"seed\":42}\n"
        );
        assert_eq!(read_log(text.as_bytes()).unwrap(), log);
    }

    #[test]
    fn bad_line_rejected() {
        assert!(matches!(read_log(&b"{\"step\":1}\n"[..]), Err(MooreError::Format(_))));
    }
}
