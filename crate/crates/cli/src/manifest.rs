//! Run manifests written beside every output so each file can be traced to
//! the command, configs, inputs and seed that produced it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub configs: Vec<FileDigest>,
    /// Digest of the effective configuration after defaults and overrides.
    pub effective_config_sha256: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {} for its digest", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects what a run touched; `finish` hashes everything and writes the
/// manifest next to the first output.
pub struct Recorder {
    command: String,
    args: Vec<String>,
    started: Instant,
    seed: Option<u64>,
    configs: Vec<PathBuf>,
    effective: Option<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            started: Instant::now(),
            seed: None,
            configs: Vec::new(),
            effective: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, path: &Path) {
        self.configs.push(path.to_path_buf());
    }

    pub fn effective_config(&mut self, rendered: &str) {
        self.effective = Some(sha256_hex(rendered.as_bytes()));
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn manifest_path(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_os_string();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Writes the manifest; a run without output files writes none.
    pub fn finish(self) -> Result<Option<PathBuf>> {
        let Some(primary) = self.outputs.first() else {
            return Ok(None);
        };
        let digests = |paths: &[PathBuf]| paths.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>>>();
        let manifest = RunManifest {
            command: self.command.clone(),
            args: self.args.clone(),
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            configs: digests(&self.configs)?,
            effective_config_sha256: self.effective.clone(),
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = Self::manifest_path(primary);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(Some(path))
    }
}
