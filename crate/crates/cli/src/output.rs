//! Artifact formatting and persistence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Six significant digits in C-style scientific notation, e.g.
/// `3.50000e-04`. Independent of locale.
pub fn sci(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // Normalize −0 so that reruns never differ by the sign of zero.
    let v = if v == 0.0 { 0.0 } else { v };
    let s = format!("{v:.5e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// An in-memory CSV document with a fixed header.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
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

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Files produced by one command, written together at the end.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_table(&mut self, name: impl Into<String>, table: &Table) {
        self.add(name, table.to_bytes());
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn write_all(&self, dir: &Path) -> Result<(), CliError> {
        for (name, bytes) in &self.files {
            write_atomic(dir, name, bytes)?;
        }
        Ok(())
    }
}

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory and a rename, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", target.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, &target).map_err(io)?;
    Ok(target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_path: String,
    /// The resolved configuration.
    pub config_echo: serde_json::Value,
    pub started: String,
    pub finished: String,
    pub wall_time_seconds: f64,
    /// File names relative to the manifest's directory.
    pub artifacts: Vec<String>,
    pub library_version: String,
    pub status: String,
    /// Command-specific headline numbers.
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("malformed manifest {}: {e}", path.display())))
    }
}

/// Removes artifacts of an earlier run in `dir` that the new run does not
/// rewrite, so every file in the directory belongs to the new manifest.
pub fn clear_stale(dir: &Path, keep: &[String]) -> Result<(), CliError> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Ok(());
    }
    let Ok(old) = RunManifest::load(&path) else {
        return Ok(());
    };
    for name in old.artifacts {
        if !keep.contains(&name) && Path::new(&name).file_name() == Some(name.as_ref()) {
            let stale = dir.join(&name);
            if stale.is_file() {
                fs::remove_file(&stale)
                    .map_err(|e| CliError::Io(format!("{}: {e}", stale.display())))?;
            }
        }
    }
    Ok(())
}
