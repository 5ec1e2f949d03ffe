//! Provenance record written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FILE_NAME: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch. The only field that differs between
    /// otherwise identical runs.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_BIN_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs: Vec::new(),
            config,
            outputs: Vec::new(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.inputs.push(InputRecord {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: hash_path(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `run.json` into `dir`.
    pub fn write_in(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(FILE_NAME);
        self.write_to(&path)?;
        Ok(path)
    }

    /// Writes the manifest of a single-file output to `<file>.run.json`.
    pub fn write_beside(&self, file: &Path) -> CliResult<PathBuf> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".");
        name.push(FILE_NAME);
        let path = file.with_file_name(name);
        self.write_to(&path)?;
        Ok(path)
    }

    fn write_to(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(|e| CliError::runtime(e.to_string()).at(path))
    }
}

/// SHA-256 of a file, or of a directory's files (name and contents, sorted by
/// name, run manifests excluded).
pub fn hash_path(path: &Path) -> CliResult<String> {
    let read_err = |p: &Path, e: std::io::Error| CliError::validation(e.to_string()).at(p);
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| read_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != FILE_NAME))
            .collect();
        names.sort();
        let mut h = Sha256::new();
        for p in names {
            h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            let bytes = fs::read(&p).map_err(|e| read_err(&p, e))?;
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| read_err(path, e))?;
        Ok(hex::encode(Sha256::digest(bytes)))
    }
}
