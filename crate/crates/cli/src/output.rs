//! Report and table files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tfm_core::audit::{fmt_float, Verdict};

use crate::config::{Command, ExperimentConfig};

/// Name of the build, from `git describe` at compile time.
pub const BUILD: &str = env!("TFM_LAB_BUILD");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    /// A command without a verdict finished.
    Completed,
}

impl From<Verdict> for Status {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Status::Pass,
            Verdict::Fail => Status::Fail,
            Verdict::Inconclusive => Status::Inconclusive,
        }
    }
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Fail => 2,
            _ => 0,
        }
    }
}

/// A CSV table written to `tables/<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }
}

/// A table cell holding a float, at 17 significant digits.
pub fn cell(x: f64) -> String {
    fmt_float(x)
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub result: serde_json::Value,
    pub tables: Vec<Table>,
}

#[derive(Serialize)]
struct Metadata {
    generated_at: String,
}

/// Everything in `report.json`. The timestamp sits alone in `metadata`,
/// the last field, so two runs can be compared byte for byte above it.
#[derive(Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    build: &'static str,
    command: &'static str,
    seed: Option<u64>,
    status: Status,
    config: &'a ExperimentConfig,
    result: &'a serde_json::Value,
    tables: Vec<String>,
    metadata: Metadata,
}

/// Renders `report.json`.
pub fn render_report(
    command: Command,
    config: &ExperimentConfig,
    outcome: &Outcome,
    generated_at: String,
) -> Result<String> {
    let report = Report {
        tool: "tfm-lab",
        version: VERSION,
        build: BUILD,
        command: command.as_str(),
        seed: config.seed,
        status: outcome.status,
        config,
        result: &outcome.result,
        tables: outcome
            .tables
            .iter()
            .map(|t| format!("tables/{}.csv", t.name))
            .collect(),
        metadata: Metadata { generated_at },
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    Ok(text)
}

/// Writes the report and its tables under `dir`; returns the report path.
pub fn write_outputs(
    dir: &Path,
    command: Command,
    config: &ExperimentConfig,
    outcome: &Outcome,
) -> Result<PathBuf> {
    let tables = dir.join("tables");
    fs::create_dir_all(&tables)
        .with_context(|| format!("cannot create output directory {}", tables.display()))?;
    for t in &outcome.tables {
        write_atomic(&tables.join(format!("{}.csv", t.name)), &t.to_bytes()?)?;
    }
    let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let path = dir.join("report.json");
    write_atomic(
        &path,
        render_report(command, config, outcome, now)?.as_bytes(),
    )?;
    Ok(path)
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let mut f =
        fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
