//! Grid runs and result tables.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::train::{train_on, RunResult};
use crate::synth::ScanSample;

pub const CSV_HEADER: [&str; 20] = [
    "method", "batching", "reweight", "rotation", "w_prec", "w_rec", "w_f1", "w_f2", "w_acc", "m_prec", "m_rec",
    "m_f1", "m_f2", "m_acc", "u_prec", "u_rec", "u_f1", "u_f2", "u_acc", "mean",
];

/// One grid entry: the configuration and either its result or its error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: ExperimentConfig,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

/// Runs every configuration on the shared dataset. Failures are recorded
/// in their row and do not stop the sweep. With `parallel > 1` runs are
/// spread over that many threads; rows keep grid order.
pub fn sweep(grid: &[ExperimentConfig], dataset: &[ScanSample], parallel: usize) -> Result<Vec<SweepRow>> {
    let run = |config: &ExperimentConfig| match train_on(config, dataset) {
        Ok(result) => SweepRow {
            config: config.clone(),
            result: Some(result),
            error: None,
        },
        Err(e) => SweepRow {
            config: config.clone(),
            result: None,
            error: Some(e.to_string()),
        },
    };
    if parallel <= 1 {
        return Ok(grid.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| grid.par_iter().map(run).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

fn csv_record(row: &SweepRow) -> Vec<String> {
    let c = &row.config;
    let mut record = vec![
        c.method(),
        c.batching.name().to_string(),
        c.reweight.to_string(),
        c.rotation.to_string(),
    ];
    match &row.result {
        Some(r) => {
            let m = &r.final_validation;
            record.extend(m.values().iter().map(|v| format!("{v:.3}")));
            record.push(format!("{:.3}", m.mean_of_15));
        }
        None => record.extend(std::iter::repeat_n(String::new(), 16)),
    }
    record
}

pub fn results_csv(rows: &[SweepRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    writer.write_record(CSV_HEADER).map_err(to_err)?;
    for row in rows {
        writer.write_record(csv_record(row)).map_err(to_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_results(rows: &[SweepRow], path: &Path, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => results_csv(rows)?,
        OutputFormat::Json => serde_json::to_string_pretty(rows).map_err(|e| Error::json(path, e))?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_results_json(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
