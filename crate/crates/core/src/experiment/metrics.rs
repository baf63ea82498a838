//! Per-round metrics CSV.
//!
//! The first line is a version comment, the second the column header.
//! Floats use Rust's shortest round-trip formatting, so identical runs give
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_TAG: &str = "# lorafl metrics v1";
pub const METRICS_HEADER: &str = "fold,round,k_or_dense,mode,train_loss,test_acc,test_loss,uplink_bytes,downlink_bytes,flops,elapsed_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub fold: usize,
    pub round: usize,
    /// Rank as a number, or `dense`.
    pub k_or_dense: String,
    /// `federated` or `central`.
    pub mode: String,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
    pub flops: u64,
    pub elapsed_ms: u64,
}

pub fn encode_metrics(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_TAG}\n{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.fold,
            r.round,
            r.k_or_dense,
            r.mode,
            r.train_loss,
            r.test_acc,
            r.test_loss,
            r.uplink_bytes,
            r.downlink_bytes,
            r.flops,
            r.elapsed_ms
        );
    }
    s
}

pub fn decode_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_TAG) {
        return Err(Error::Format("metrics file lacks the v1 version line".into()));
    }
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("unexpected metrics header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let err = || Error::Format(format!("metrics line {}: {line:?}", i + 3));
            if f.len() != 11 {
                return Err(err());
            }
            let n = |j: usize| f[j].parse::<u64>().map_err(|_| err());
            let x = |j: usize| f[j].parse::<f64>().map_err(|_| err());
            Ok(MetricsRow {
                fold: n(0)? as usize,
                round: n(1)? as usize,
                k_or_dense: f[2].to_string(),
                mode: f[3].to_string(),
                train_loss: x(4)?,
                test_acc: x(5)?,
                test_loss: x(6)?,
                uplink_bytes: n(7)? as usize,
                downlink_bytes: n(8)? as usize,
                flops: n(9)?,
                elapsed_ms: n(10)?,
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, encode_metrics(rows)).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_metrics(&text).map_err(|e| e.in_file(path))
}

/// Mean test accuracy per `(k_or_dense, round)` across folds, grouped by
/// series in first-appearance order.
pub fn mean_accuracy_by_round(rows: &[MetricsRow]) -> Vec<(String, Vec<(usize, f64)>)> {
    // (round, accuracy sum, fold count) per series
    type Sums = Vec<(usize, f64, usize)>;
    let mut series: Vec<(String, Sums)> = Vec::new();
    for r in rows {
        let idx = match series.iter().position(|(k, _)| *k == r.k_or_dense) {
            Some(i) => i,
            None => {
                series.push((r.k_or_dense.clone(), Vec::new()));
                series.len() - 1
            }
        };
        let pts = &mut series[idx].1;
        match pts.iter_mut().find(|(round, _, _)| *round == r.round) {
            Some(p) => {
                p.1 += r.test_acc;
                p.2 += 1;
            }
            None => pts.push((r.round, r.test_acc, 1)),
        }
    }
    series
        .into_iter()
        .map(|(k, mut pts)| {
            pts.sort_by_key(|p| p.0);
            (k, pts.into_iter().map(|(r, s, n)| (r, s / n as f64)).collect())
        })
        .collect()
}
