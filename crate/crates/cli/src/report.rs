//! Experiment reports: deterministic data files plus a manifest that
//! echoes the full configuration so any run can be reproduced from its
//! output directory alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use dualfilter_core::error::{Error, Result};

/// Output format for tabular data files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv|json)")),
        }
    }
}

/// A simple in-memory table rendered as CSV or JSON records.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = serde_json::Map::new();
                for (c, v) in self.columns.iter().zip(row) {
                    let val = v
                        .parse::<f64>()
                        .ok()
                        .and_then(serde_json::Number::from_f64)
                        .map(Value::Number)
                        .unwrap_or_else(|| Value::String(v.clone()));
                    obj.insert(c.clone(), val);
                }
                Value::Object(obj)
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("table serializes")
    }
}

/// Collects data files and summary values, then writes the manifest.
pub struct ReportBuilder {
    experiment: String,
    out_dir: PathBuf,
    format: OutputFormat,
    files: Vec<String>,
    summary: serde_json::Map<String, Value>,
    started: std::time::Instant,
}

impl ReportBuilder {
    pub fn new(experiment: &str, out_dir: &Path, format: OutputFormat) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Error::Parse(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            experiment: experiment.to_string(),
            out_dir: out_dir.to_path_buf(),
            format,
            files: Vec::new(),
            summary: serde_json::Map::new(),
            started: std::time::Instant::now(),
        })
    }

    pub fn format(&self) -> OutputFormat {
        self.format
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Write a table in the configured format; `stem` gets the extension.
    pub fn write_table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let (name, data) = match self.format {
            OutputFormat::Csv => (format!("{stem}.csv"), table.to_csv()),
            OutputFormat::Json => (format!("{stem}.json"), table.to_json()),
        };
        self.write_raw(&name, &data)
    }

    pub fn write_raw(&mut self, name: &str, data: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, data)
            .map_err(|e| Error::Parse(format!("cannot write {}: {e}", path.display())))?;
        self.record(name);
        Ok(())
    }

    pub fn add_summary(&mut self, key: &str, value: Value) {
        self.summary.insert(key.to_string(), value);
    }

    pub fn add_summary_f64(&mut self, key: &str, value: f64) {
        if let Some(num) = serde_json::Number::from_f64(value) {
            self.summary.insert(key.to_string(), Value::Number(num));
        } else {
            self.summary
                .insert(key.to_string(), Value::String(format!("{value}")));
        }
    }

    /// Write `manifest.json` and return the summary for the caller.
    pub fn finish<C: Serialize>(mut self, config: &C, seed: u64) -> Result<Value> {
        let manifest = serde_json::json!({
            "experiment": self.experiment,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": serde_json::to_value(config).map_err(|e| Error::Parse(e.to_string()))?,
            "data_files": self.files,
            "summary": Value::Object(self.summary.clone()),
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.out_dir.join("manifest.json");
        fs::write(&path, text)
            .map_err(|e| Error::Parse(format!("cannot write {}: {e}", path.display())))?;
        self.summary
            .insert("manifest".into(), Value::String("manifest.json".into()));
        Ok(Value::Object(self.summary))
    }
}

/// Shortest-roundtrip float formatting with a `.` decimal separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
