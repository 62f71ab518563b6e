//! Report emission: pretty JSON documents plus long-format CSV
//! (`run_id,quantity,class,state,value,half_width`), both deterministic
//! functions of the computed values so fixed (config, seed) pairs reproduce
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::sim::SimEstimates;
use crate::stats::Estimate;

use super::HarnessError;

pub const CSV_HEADER: &str = "run_id,quantity,class,state,value,half_width";

#[derive(Debug, Clone)]
pub struct CsvRow {
    pub run_id: String,
    pub quantity: &'static str,
    pub class: Option<usize>,
    pub state: Option<usize>,
    pub value: f64,
    pub half_width: f64,
}

impl CsvRow {
    pub fn scalar(run_id: &str, quantity: &'static str, e: Estimate) -> Self {
        CsvRow {
            run_id: run_id.to_string(),
            quantity,
            class: None,
            state: None,
            value: e.value,
            half_width: e.half_width,
        }
    }
}

fn opt(idx: Option<usize>) -> String {
    idx.map(|i| i.to_string()).unwrap_or_default()
}

pub fn render_csv(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        // f64 Display is the shortest round-trip form: deterministic.
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            r.quantity,
            opt(r.class),
            opt(r.state),
            r.value,
            r.half_width
        )
        .expect("string write");
    }
    out
}

/// Long-format rows for one merged estimate set.
pub fn estimate_rows(run_id: &str, est: &SimEstimates, capacities: &[f64]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    rows.push(CsvRow::scalar(run_id, "mean_workload", est.ew.estimate()));
    for (d, s) in est.p0.iter().enumerate() {
        rows.push(CsvRow {
            run_id: run_id.to_string(),
            quantity: "p0",
            class: None,
            state: Some(d),
            value: s.mean(),
            half_width: s.half_width(),
        });
    }
    for (d, s) in est.busy.iter().enumerate() {
        rows.push(CsvRow {
            run_id: run_id.to_string(),
            quantity: "busy",
            class: None,
            state: Some(d),
            value: s.mean(),
            half_width: s.half_width(),
        });
    }
    let agg = est.empty_aggregate(capacities);
    rows.push(CsvRow::scalar(run_id, "empty_weighted_sum", agg));
    if let Some(m_kd) = &est.m_kd {
        for (k, row) in m_kd.iter().enumerate() {
            for (d, s) in row.iter().enumerate() {
                rows.push(CsvRow {
                    run_id: run_id.to_string(),
                    quantity: "mean_m",
                    class: Some(k),
                    state: Some(d),
                    value: s.mean(),
                    half_width: s.half_width(),
                });
            }
        }
    }
    if let Some(share) = &est.share_kd {
        for (k, row) in share.iter().enumerate() {
            for (d, s) in row.iter().enumerate() {
                rows.push(CsvRow {
                    run_id: run_id.to_string(),
                    quantity: "share",
                    class: Some(k),
                    state: Some(d),
                    value: s.mean(),
                    half_width: s.half_width(),
                });
            }
        }
    }
    rows.push(CsvRow {
        run_id: run_id.to_string(),
        quantity: "events",
        class: None,
        state: None,
        value: est.events as f64,
        half_width: 0.0,
    });
    rows
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        HarnessError::Config(format!("cannot create {}: {e}", dir.display()))
    })?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| {
        HarnessError::Config(format!("cannot write {}: {e}", path.display()))
    })?;
    Ok(path)
}

pub fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
) -> Result<PathBuf, HarnessError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_text(dir, name, &text)
}
