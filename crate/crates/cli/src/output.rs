//! Output files, digests, summaries and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{schema_errors, MANIFEST_SCHEMA, SUMMARY_SCHEMA};
use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Floats in CSV files carry 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Where a number in the outputs came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub output: String,
    pub module: String,
    pub operation: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config_hash: Option<String>,
    pub master_seed: u64,
    pub workers: usize,
    pub files: Vec<FileRecord>,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<String>,
    pub open_questions: Vec<String>,
    pub provenance: Vec<Provenance>,
}

/// Output directory that records a digest for every file written.
/// With no root, nothing touches the disk but digests are still kept.
#[derive(Debug)]
pub struct OutputDir {
    root: Option<PathBuf>,
    files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(root: Option<&Path>) -> Result<Self, CliError> {
        if let Some(r) = root {
            std::fs::create_dir_all(r).map_err(|e| CliError::io(r, e))?;
        }
        Ok(Self {
            root: root.map(Path::to_path_buf),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(root) = &self.root {
            let path = root.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        }
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::io(name, e);
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(&row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(name, e))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(name, e))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Writes `manifest.json`; it is not listed among its own files.
    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), CliError> {
        let value = serde_json::to_value(manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        let errors = schema_errors(MANIFEST_SCHEMA, &value);
        if !errors.is_empty() {
            return Err(CliError::Runtime(format!("manifest violates its schema: {}", errors.join("; "))));
        }
        if let Some(root) = &self.root {
            let path = root.join("manifest.json");
            let mut bytes = serde_json::to_vec_pretty(&value).map_err(|e| CliError::io(&path, e))?;
            bytes.push(b'\n');
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Common envelope of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub kind: String,
    pub tool_version: String,
    pub config_hash: Option<String>,
    pub master_seed: u64,
    pub module: String,
    pub parameters: Value,
    pub results: Value,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assertions: Option<Value>,
}

impl Summary {
    pub fn to_validated_value(&self) -> Result<Value, CliError> {
        let value = serde_json::to_value(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        let errors = schema_errors(SUMMARY_SCHEMA, &value);
        if !errors.is_empty() {
            return Err(CliError::Runtime(format!("summary violates its schema: {}", errors.join("; "))));
        }
        Ok(value)
    }
}

/// Survival CSV as `(n, fraction, stderr)` columns.
pub fn read_survival_csv(path: &Path) -> Result<(Vec<u64>, Vec<f64>, Vec<f64>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let (mut n, mut f, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let bad = |e: &dyn std::fmt::Display| CliError::io(path, format!("malformed row: {e}"));
        n.push(rec[0].parse().map_err(|e| bad(&e))?);
        f.push(rec[1].parse().map_err(|e| bad(&e))?);
        s.push(rec[2].parse().map_err(|e| bad(&e))?);
    }
    Ok((n, f, s))
}
