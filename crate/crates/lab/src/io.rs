//! CSV and JSON files: datasets, per-run reports, sweep summaries.

use std::fs;
use std::path::Path;

use cilab_core::scenario::{LabeledDataset, Split};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCsvRow {
    pub experiment_id: String,
    pub step: usize,
    pub class_id: usize,
    pub sic: f64,
    pub cic: f64,
    pub nic: f64,
    pub all_nic: Option<f64>,
    pub log_sim: Option<f64>,
    pub degenerate_checkpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCsvRow {
    pub experiment_id: String,
    pub step: usize,
    pub class_id: usize,
    pub acc_init: f64,
    pub acc_now: f64,
    /// Empty when the initial accuracy is zero.
    pub fg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwLooCsvRow {
    pub pool_id: String,
    pub held_out_step: String,
    pub rho_joint: Option<f64>,
    pub rho_sic_only: Option<f64>,
    pub mae_joint: f64,
    /// Joint-model slopes (SIC;CIC;NIC) of the fold.
    pub betas: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCsvRow {
    pub partition: String,
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub mean_lo: Option<f64>,
    pub mean_hi: Option<f64>,
    pub std: Option<f64>,
    pub std_lo: Option<f64>,
    pub std_hi: Option<f64>,
    /// `bca`, `percentile` (degenerate bootstrap) or empty.
    pub std_method: String,
    /// Zero spread: every observation is identical.
    pub degenerate: bool,
    pub failed_runs: usize,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> LabResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> LabResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

fn csv_io(path: &Path, e: csv::Error) -> LabError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => LabError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        LabError::Csv(e)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> LabResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Header `f0, .., f{q-1}, label`.
pub fn write_dataset(path: &Path, data: &LabeledDataset) -> LabResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(f64::to_string).collect();
        rec.push(data.label(i).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

pub fn read_dataset(path: &Path, split: Split) -> LabResult<LabeledDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = r.headers()?.clone();
    let dim = header.len().checked_sub(1).filter(|&d| d > 0);
    let dim = match dim {
        Some(d) if header.get(d) == Some("label") && (0..d).all(|j| header.get(j) == Some(&format!("f{j}"))) => d,
        _ => {
            return Err(LabError::Config(format!(
                "{}: header must be f0..f{{q-1}},label",
                path.display()
            )))
        }
    };
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for j in 0..dim {
            inputs.push(
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?,
            );
        }
        labels.push(
            rec[dim]
                .parse::<usize>()
                .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(LabeledDataset::new(dim, inputs, labels, split)?)
}
