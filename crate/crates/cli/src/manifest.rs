//! Run manifests: what was run, with which settings, on which bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    /// Command line exactly as given.
    pub argv: Vec<String>,
    /// Fully resolved settings, defaults included.
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    /// SHA-256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, keyed by path relative to the manifest.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, flags: &impl Serialize, seeds: Vec<u64>) -> Self {
        Self {
            tool: "qecbench",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            argv: std::env::args().collect(),
            flags: serde_json::to_value(flags).expect("settings serialize"),
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let key = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
        self.outputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    /// Writes `dir/manifest.json`.
    pub fn write_in(&self, dir: &Path) -> Result<PathBuf, CliError> {
        self.write_to(&dir.join(MANIFEST_FILE))
    }

    /// Writes `<file>.manifest.json` next to a single-file output.
    pub fn write_beside(&self, file: &Path) -> Result<PathBuf, CliError> {
        let mut name = file.as_os_str().to_owned();
        name.push(".");
        name.push(MANIFEST_FILE);
        self.write_to(Path::new(&name))
    }

    fn write_to(&self, path: &Path) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        Ok(path.to_path_buf())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
