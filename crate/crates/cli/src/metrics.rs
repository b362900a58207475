//! Metrics CSV emission and ingestion.
//!
//! One schema serves every phase; the header is fixed and ordered exactly
//! as the struct declares its fields. Cells that do not apply to a phase
//! (e.g. `train_loss` of a skipped layer visit) hold `NaN`, which the CSV
//! layer round-trips.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One measurement row. Field order is the CSV column order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub dataset: String,
    pub model: String,
    /// `baseline` or `clustered`.
    pub method: String,
    /// `l1` or `movement`.
    pub criterion: String,
    pub sparsity: f64,
    /// `train`, `finetune`, or `ticket`.
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f32,
    pub test_accuracy: f32,
    pub params: u64,
    pub flops: u64,
}

/// The exact header line, for validation and tests.
pub const HEADER: &str = "run_id,seed,dataset,model,method,criterion,sparsity,phase,epoch,train_loss,test_accuracy,params,flops";

/// Writes rows (header first) to a CSV file.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    }
    // A rowless file still needs its header so readers see the schema.
    if rows.is_empty() {
        writer
            .write_record(HEADER.split(','))
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

/// Reads a metrics CSV back, validating the header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != HEADER {
        return Err(CliError::Data(format!(
            "{}: unexpected header\n  got  {header}\n  want {HEADER}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<MetricsRow>().enumerate() {
        rows.push(record.map_err(|e| CliError::Data(format!("{} row {}: {e}", path.display(), i + 2)))?);
    }
    Ok(rows)
}
