//! Output files: CSV tables with header rows, metadata sidecars, error logs
//! and the plain-text summary table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::CampaignConfig;
use crate::error::CliError;

pub const TOOL: &str = "vibsim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written next to every output file as `<file>.meta.toml`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata<'a> {
    pub tool: &'a str,
    pub version: &'a str,
    pub command: &'a str,
    pub config_hash: &'a str,
    pub file: &'a str,
    pub columns: &'a [String],
}

/// An output directory bound to one command invocation.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    force: bool,
    command: String,
    config_hash: String,
}

impl OutputDir {
    pub fn create(config: &CampaignConfig, force: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
        Ok(Self {
            root: config.out.clone(),
            force,
            command: config.campaign.name().to_string(),
            config_hash: config.hash(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails when any of `names` exists and overwriting was not forced.
    pub fn ensure_free<S: AsRef<str>>(&self, names: &[S]) -> Result<(), CliError> {
        if self.force {
            return Ok(());
        }
        match names.iter().map(|n| self.path(n.as_ref())).find(|p| p.exists()) {
            Some(p) => Err(CliError::Usage(format!("{} exists; pass --force to overwrite", p.display()))),
            None => Ok(()),
        }
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8], columns: &[String]) -> Result<PathBuf, CliError> {
        self.ensure_free(&[name])?;
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let meta = Metadata {
            tool: TOOL,
            version: VERSION,
            command: &self.command,
            config_hash: &self.config_hash,
            file: name,
            columns,
        };
        let meta_path = self.path(&format!("{name}.meta.toml"));
        let text = toml::to_string(&meta).expect("metadata serialises");
        fs::write(&meta_path, text).map_err(|e| CliError::io(&meta_path, e))?;
        Ok(path)
    }

    pub fn write_csv(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Usage(format!("{name}: {e}"));
        w.write_record(&table.header).map_err(csv_err)?;
        for row in &table.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
        self.write_bytes(name, &bytes, &table.header)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write_bytes(name, text.as_bytes(), &[])
    }
}

/// A header plus string rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Column-aligned text rendering for the terminal.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        let mut out = line(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip decimal form; failed or missing values are empty.
pub fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Fixed four-decimal rendering for summary tables.
pub fn short(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

/// Failure messages keyed by cell, written sorted so the log is stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorLog {
    entries: Vec<(String, String)>,
}

impl ErrorLog {
    pub fn push(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.entries.push((key.into(), message.into()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        let mut entries = self.entries.clone();
        entries.sort();
        entries.iter().map(|(k, m)| format!("{k}: {m}\n")).collect()
    }
}
