//! Aggregation of metrics CSVs into mean ± standard-deviation tables, one
//! row per (method, criterion, sparsity) cell, in the presentation shape of
//! the accuracy-comparison tables.
//!
//! A run's result is its *last* row (highest epoch) among finetune/ticket
//! phases; training-phase rows are progress logs and never aggregated.
//! Deviation is the sample standard deviation (n−1 denominator), zero for a
//! single run.

use crate::error::{CliError, Result};
use crate::metrics::MetricsRow;
use std::collections::BTreeMap;
use std::path::Path;

/// One aggregated table cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportCell {
    pub method: String,
    pub criterion: String,
    pub sparsity: f64,
    /// Number of runs aggregated.
    pub n: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_params: f64,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Groups final finetune/ticket rows into (method, criterion, sparsity)
/// cells and computes mean ± sample std of test accuracy across runs.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<ReportCell> {
    // Last row per run: keyed by the full cell plus run identity, keeping
    // the highest epoch (ties resolve to the later row in file order).
    type CellKey = (u64, String, String);
    let mut finals: BTreeMap<(CellKey, String, u64), &MetricsRow> = BTreeMap::new();
    for row in rows {
        if row.phase != "finetune" && row.phase != "ticket" {
            continue;
        }
        let key = (
            (row.sparsity.to_bits(), row.criterion.clone(), row.method.clone()),
            row.run_id.clone(),
            row.seed,
        );
        match finals.entry(key) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(row);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                if row.epoch >= e.get().epoch {
                    e.insert(row);
                }
            }
        }
    }

    let mut cells: BTreeMap<CellKey, Vec<&MetricsRow>> = BTreeMap::new();
    for ((cell, _, _), row) in finals {
        cells.entry(cell).or_default().push(row);
    }

    cells
        .into_iter()
        .map(|((sparsity_bits, criterion, method), rows)| {
            let accs: Vec<f64> = rows.iter().map(|r| f64::from(r.test_accuracy)).collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let params: Vec<f64> = rows.iter().map(|r| r.params as f64).collect();
            ReportCell {
                method,
                criterion,
                sparsity: f64::from_bits(sparsity_bits),
                n: rows.len(),
                mean_accuracy: mean,
                std_accuracy: sample_std(&accs, mean),
                mean_params: params.iter().sum::<f64>() / params.len() as f64,
            }
        })
        .collect()
}

/// Renders cells as a fixed-width text table; accuracy in percent.
pub fn format_table(cells: &[ReportCell]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<10} {:>8} {:>3} {:>10}  {:>16}\n",
        "method", "criterion", "sparsity", "n", "params", "test_accuracy"
    ));
    for c in cells {
        out.push_str(&format!(
            "{:<10} {:<10} {:>8.2} {:>3} {:>10.0}  {:>7.2} \u{b1} {:>5.2}\n",
            c.method,
            c.criterion,
            c.sparsity,
            c.n,
            c.mean_params,
            c.mean_accuracy * 100.0,
            c.std_accuracy * 100.0,
        ));
    }
    out
}

/// Reads every `*.csv` in `dir` (non-recursive, name order) into one row
/// list.
pub fn read_metrics_dir(dir: &Path) -> Result<Vec<MetricsRow>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no .csv files in {}", dir.display())));
    }
    let mut rows = Vec::new();
    for path in &paths {
        rows.extend(crate::metrics::read_metrics(path)?);
    }
    Ok(rows)
}
