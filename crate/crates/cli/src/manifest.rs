//! Per-subcommand run manifests: what went in, what came out, under which config.

use std::path::{Path, PathBuf};

use lvkd_core::io::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    /// Absent for directories and files that do not exist.
    pub sha256: Option<String>,
}

impl FileEntry {
    fn of(path: PathBuf) -> Self {
        let sha256 = if path.is_file() {
            std::fs::read(&path).ok().map(|b| sha256_hex(&b))
        } else {
            None
        };
        Self { path, sha256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config_hash: String,
    /// Full configuration, enough to re-run the subcommand.
    pub config: Option<RunConfig>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &RunConfig) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: Some(config.clone()),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// For subcommands that run without a config file.
    pub fn standalone(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: String::new(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: PathBuf) {
        self.inputs.push(FileEntry { path, sha256: None });
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(FileEntry { path, sha256: None });
    }

    pub fn file_name(subcommand: &str) -> String {
        format!("run_manifest.{subcommand}.json")
    }

    /// Hashes every listed file and writes `run_manifest.<subcommand>.json` into `out_dir`.
    pub fn write(&mut self, out_dir: &Path) -> Result<PathBuf> {
        for entry in self.inputs.iter_mut().chain(self.outputs.iter_mut()) {
            *entry = FileEntry::of(std::mem::take(&mut entry.path));
        }
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
        let path = out_dir.join(Self::file_name(&self.subcommand));
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Confirms the manifest was produced under `config`.
    pub fn check_config(&self, config: &RunConfig) -> Result<()> {
        if self.config_hash != config.hash() {
            return Err(CliError::Config(format!(
                "{} run used config {}, current config hashes to {}",
                self.subcommand,
                self.config_hash,
                config.hash()
            )));
        }
        Ok(())
    }

    pub fn output_hash(&self, name: &str) -> Option<&str> {
        self.outputs
            .iter()
            .find(|e| e.path.file_name().is_some_and(|n| n == name))
            .and_then(|e| e.sha256.as_deref())
    }
}
