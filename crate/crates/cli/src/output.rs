use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use por_core::harness::{AggregateRow, RoundRow};
use serde::{Deserialize, Serialize};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_rounds(path: &Path, rows: &[RoundRow]) -> Result<()> {
    write_csv(path, rows)
}

/// File-name-safe form of a sweep value.
pub fn slug(value: &str) -> String {
    value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

pub fn read_aggregates(paths: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    let mut rows = Vec::new();
    for p in paths {
        let mut r = csv::Reader::from_path(p).with_context(|| format!("opening {}", p.display()))?;
        for row in r.deserialize() {
            rows.push(row.with_context(|| format!("reading {}", p.display()))?);
        }
    }
    Ok(rows)
}

/// Mean of every (parameter, value) group across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub value: String,
    pub runs: usize,
    pub committed_rounds: f64,
    pub throughput_tps: f64,
    pub avg_block_time_ms: Option<f64>,
    pub avg_consensus_time_ms: Option<f64>,
    pub all_safe: bool,
}

pub fn summarize(rows: &[AggregateRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&AggregateRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = (r.parameter.clone(), r.value.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean_opt = |f: fn(&AggregateRow) -> Option<f64>| {
                let v: Vec<f64> = g.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            SummaryRow {
                runs: g.len(),
                committed_rounds: g.iter().map(|r| r.committed_rounds as f64).sum::<f64>() / n,
                throughput_tps: g.iter().map(|r| r.throughput_tps).sum::<f64>() / n,
                avg_block_time_ms: mean_opt(|r| r.avg_block_time_ms),
                avg_consensus_time_ms: mean_opt(|r| r.avg_consensus_time_ms),
                all_safe: g.iter().all(|r| r.safe),
                parameter: key.0,
                value: key.1,
            }
        })
        .collect()
}
