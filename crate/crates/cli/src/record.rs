//! JSON result records and CSV traces.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotConverged,
    Failed,
}

/// One JSON document per run. Field order is part of the frozen schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRecord {
    pub command: String,
    pub status: Status,
    pub inputs: RunConfig,
    pub energy_density: Option<f64>,
    pub reference: Option<f64>,
    /// Present only together with `reference`.
    pub relative_error: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time_s: f64,
    /// CSV trace file name, relative to the output directory.
    pub trace: Option<String>,
    pub error: Option<String>,
    pub details: Value,
}

impl ResultRecord {
    pub fn new(command: &str, inputs: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            status: Status::Ok,
            inputs: inputs.clone(),
            energy_density: None,
            reference: None,
            relative_error: None,
            iterations: None,
            wall_time_s: 0.0,
            trace: None,
            error: None,
            details: Value::Null,
        }
    }

    pub fn set_energy(&mut self, e: f64, reference: Option<f64>) {
        self.energy_density = Some(e);
        self.reference = reference;
        self.relative_error = reference.map(|r| ((e - r) / r).abs());
    }
}

/// A CSV table with a fixed header.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Trace {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Round-trip float formatting for CSV cells.
pub fn f(x: f64) -> String {
    format!("{x:e}")
}

pub fn record_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{}.json", command.replace('-', "_")))
}

pub fn trace_name(command: &str) -> String {
    format!("{}_trace.csv", command.replace('-', "_"))
}

/// Writes the record, and the trace when given, into `dir`.
pub fn write_outputs(dir: &Path, record: &mut ResultRecord, trace: Option<&Trace>) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(t) = trace {
        let name = trace_name(&record.command);
        fs::write(dir.join(&name), t.to_csv()).with_context(|| format!("writing {name}"))?;
        record.trace = Some(name);
    }
    let path = record_path(dir, &record.command);
    let mut file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, record)?;
    writeln!(file)?;
    Ok(path)
}
