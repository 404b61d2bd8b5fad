//! Deterministic report files.
//!
//! The main report (`<command>.json`, plus `.csv` for tabular outputs) is a
//! pure function of the config, so re-runs are byte-identical; anything
//! run-dependent (wall-clock timestamp, thread count, elapsed time) goes to
//! a separate `run_meta.json` that comparisons exclude.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn wants_csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

pub struct ReportWriter {
    out_dir: PathBuf,
    format: Format,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: &'static str,
    command: &'a str,
    report: &'a T,
}

impl ReportWriter {
    pub fn new(out_dir: &Path, format: Format) -> Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            format,
        })
    }

    /// JSON is always written; reports are the primary machine interface.
    pub fn write_json<T: Serialize>(&self, command: &str, report: &T) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("{command}.json"));
        let envelope = Envelope {
            schema_version: SCHEMA_VERSION,
            command,
            report,
        };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// CSV is written for tabular outputs when the format asks for it.
    pub fn write_csv(&self, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<Option<PathBuf>> {
        if !self.format.wants_csv() {
            return Ok(None);
        }
        let path = self.out_dir.join(format!("{name}.csv"));
        let mut text = String::new();
        writeln!(text, "{header}")?;
        for row in rows {
            let mut first = true;
            for v in row {
                if !first {
                    text.push(',');
                }
                write!(text, "{v}")?;
                first = false;
            }
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(Some(path))
    }

    pub fn write_meta(&self, command: &str, threads: Option<usize>, elapsed_secs: f64) -> Result<()> {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "command": command,
            "unix_timestamp": timestamp,
            "threads": threads,
            "elapsed_secs": elapsed_secs,
        });
        let path = self.out_dir.join("run_meta.json");
        std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&meta)?))
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
