use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use inforewrite::config::PipelineConfig;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Provenance written next to every command's artifacts.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub library_version: String,
    pub formats: Value,
    pub timestamp_unix: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub summary: Value,
}

fn entry(path: &Path) -> CliResult<FileEntry> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(FileEntry {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Files under `path` if it is a directory, else `path` itself, sorted.
fn expand(path: &Path) -> CliResult<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let read = std::fs::read_dir(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    for item in read {
        let p = item.map_err(|e| Failure::Runtime(e.to_string()))?.path();
        if p.is_file() && !p.to_string_lossy().ends_with("manifest.json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub struct Recorder {
    pub command: &'static str,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

impl Recorder {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) {
        self.inputs.push(path.as_ref().to_path_buf());
    }

    pub fn output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().to_path_buf());
    }

    /// Writes the manifest to `explicit`, or next to the first output.
    pub fn write(self, config: &PipelineConfig, explicit: Option<&Path>) -> CliResult<PathBuf> {
        let first = self.outputs.first().cloned().ok_or_else(|| Failure::Runtime("command declared no outputs".into()))?;
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None if first.is_dir() => first.join("manifest.json"),
            None => PathBuf::from(format!("{}.manifest.json", first.display())),
        };
        let mut inputs = Vec::new();
        for p in &self.inputs {
            for f in expand(p)? {
                inputs.push(entry(&f)?);
            }
        }
        let mut outputs = Vec::new();
        for p in &self.outputs {
            for f in expand(p)? {
                outputs.push(entry(&f)?);
            }
        }
        let manifest = Manifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            library_version: inforewrite::VERSION.to_string(),
            formats: serde_json::json!({
                "sparse_index": inforewrite::sparse::INDEX_FORMAT_VERSION,
                "dense_shard": inforewrite::dense::SHARD_FORMAT_VERSION,
                "demonstrations": 1,
                "preamble_patterns": inforewrite::rewriter::PREAMBLE_PATTERNS_VERSION,
            }),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config_hash: crate::config::hash(config),
            config: config.clone(),
            inputs,
            outputs,
            summary: self.summary,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
