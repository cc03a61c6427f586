//! Report files. Everything is written to a temporary file in the target
//! directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use dflab::verify::Table;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    dflab_version: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

/// The directory of one command's reports.
#[derive(Debug, Clone)]
pub struct OutDir {
    dir: PathBuf,
    command: String,
}

impl OutDir {
    pub fn create(root: &Path, command: &str) -> Result<Self, CliError> {
        let dir = root.join(command);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            command: command.to_string(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(&target, e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(&target, e))?;
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        Ok(target)
    }

    /// The report proper: schema version, resolved config and the result.
    pub fn write_report<T: Serialize>(&self, name: &str, cfg: &RunConfig, result: &T) -> Result<PathBuf, CliError> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command: &self.command,
            dflab_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Numeric(format!("{name}: {e}"));
        w.write_record(header).map_err(fail)?;
        for r in rows {
            w.write_record(r).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Numeric(format!("{name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_table(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let header: Vec<&str> = table.columns.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = table.rows.iter().map(|r| r.iter().map(|v| num(*v)).collect()).collect();
        self.write_csv(name, &header, &rows)
    }
}

/// Shortest round-trip representation; non-finite values become empty cells.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

pub fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// Wall-clock facts kept out of the reports so that those stay reproducible.
#[derive(Debug, Serialize)]
pub struct Metadata {
    pub command: String,
    pub argv: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub elapsed_ms: u128,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub exit_code: i32,
}

pub fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}
