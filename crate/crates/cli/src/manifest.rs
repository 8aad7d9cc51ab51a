//! Output directory bookkeeping and the run manifest.
//!
//! Every file a command writes goes through [`OutputDir`], which records its
//! SHA-256. The manifest lists the tool version, command, seed, the hash of the
//! effective configuration and the hashes of all inputs and outputs. It holds no
//! timestamps or host details, so reruns produce identical bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical effective configuration (`config.json`).
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects written files and their hashes.
pub struct OutputDir {
    dir: PathBuf,
    outputs: Vec<FileHash>,
    inputs: Vec<FileHash>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new(), inputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(FileHash { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(mixsel_core::Error::from)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Write a CSV with the given header and rows of already formatted fields.
    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Core(mixsel_core::Error::from(e));
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(&self.path(name), e.into_error()))?;
        self.write_bytes(name, &bytes)
    }

    /// Record a file produced by another writer (already on disk).
    pub fn record(&mut self, name: &str) -> CliResult<()> {
        let sha256 = hash_file(&self.path(name))?;
        self.outputs.push(FileHash { path: name.to_string(), sha256 });
        Ok(())
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = hash_file(path)?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.push(FileHash { path: name, sha256 });
        Ok(())
    }

    /// Write `config.json` and `manifest.json`; returns the manifest.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> CliResult<Manifest> {
        let mut text = config.to_json();
        text.push('\n');
        let config_sha256 = sha256_hex(text.as_bytes());
        self.write_bytes(CONFIG_FILE, text.as_bytes())?;
        let manifest = Manifest {
            tool: "mixsel".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: mixsel_core::VERSION.into(),
            command: command.into(),
            seed: config.seed,
            config_sha256,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(mixsel_core::Error::from)?;
        text.push('\n');
        let path = self.path(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
