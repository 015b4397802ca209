//! Metrics log: one CSV row per (run, epoch, split).
//!
//! Rows with `epoch = final` hold the selected model's metrics. Floats use
//! Rust's shortest round-trip formatting, so identical runs give identical
//! bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::train::RunRecord;

pub const FINAL_EPOCH: &str = "final";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Epoch number, or `final`.
    pub epoch: String,
    pub split: String,
    pub task_metric: f64,
    pub invariance_ratio: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub seed: u64,
    pub dataset: String,
    pub model: String,
    pub method: String,
}

impl MetricsRow {
    pub fn epoch_number(&self) -> Option<usize> {
        self.epoch.parse().ok()
    }
}

pub fn rows(record: &RunRecord) -> Vec<MetricsRow> {
    let cfg = &record.config;
    let mut out = Vec::new();
    for run in &record.runs {
        let row = |epoch: String, split: &str, acc: f64, inv: Option<f64>| MetricsRow {
            epoch,
            split: split.to_string(),
            task_metric: acc,
            invariance_ratio: inv,
            k: inv.map(|_| cfg.invariance_k),
            seed: run.seed,
            dataset: record.dataset.clone(),
            model: cfg.layer_kind.name().to_string(),
            method: cfg.method().to_string(),
        };
        for e in &run.epochs {
            for m in &e.metrics {
                out.push(row(e.epoch.to_string(), &m.split, m.accuracy, m.invariance));
            }
        }
        for m in &run.final_metrics {
            out.push(row(FINAL_EPOCH.to_string(), &m.split, m.accuracy, m.invariance));
        }
    }
    out
}

pub fn write_rows<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["epoch", "split", "task_metric", "invariance_ratio", "K", "seed", "dataset", "model", "method"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(records: &[&RunRecord], path: &Path) -> Result<()> {
    let all: Vec<MetricsRow> = records.iter().flat_map(|r| rows(r)).collect();
    write_rows(&all, std::fs::File::create(path)?)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}
