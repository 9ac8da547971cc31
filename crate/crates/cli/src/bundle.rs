//! Output directories with an embedded run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// An input file read once, together with its content hash.
pub struct Input {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub sha256: String,
}

impl Input {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        Ok(Self { path: path.to_path_buf(), bytes, sha256 })
    }

    pub fn stem(&self) -> String {
        self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
    }
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every output bundle.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects files written into one output directory.
pub struct Bundle {
    dir: PathBuf,
    subcommand: String,
    started_at: String,
    outputs: Vec<String>,
}

impl Bundle {
    pub fn create(dir: &Path, subcommand: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), subcommand: subcommand.into(), started_at: timestamp(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Write the manifest; call after every output has been written and checked.
    pub fn finish(self, config: serde_json::Value, inputs: &[&Input], seed: Option<u64>) -> Result<()> {
        let manifest = Manifest {
            subcommand: self.subcommand,
            config,
            inputs: inputs
                .iter()
                .map(|i| InputDigest { path: i.path.display().to_string(), sha256: i.sha256.clone() })
                .collect(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: timestamp(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}
