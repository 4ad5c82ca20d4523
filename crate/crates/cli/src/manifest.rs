use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical JSON form of an effective configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance stamped next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name; enough to rerun the command.
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_input(path)?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

fn timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return epoch;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| proplab::Error::io(path, e).into())
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| proplab::Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| proplab::Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| proplab::Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| proplab::Error::io(path, e))?;
    tmp.persist(path).map_err(|e| proplab::Error::io(path, e.error))?;
    Ok(())
}

/// Collects inputs and outputs of one command, then writes everything.
pub struct Run {
    command: &'static str,
    argv: Vec<String>,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<(PathBuf, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &'static str, argv: &[String], config_hash: String, seed: Option<u64>) -> Self {
        Run {
            command,
            argv: argv.to_vec(),
            config_hash,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Sets the hash and seed once the effective configuration is known.
    pub fn with_config(mut self, config_hash: String, seed: Option<u64>) -> Self {
        self.config_hash = config_hash;
        self.seed = seed;
        self
    }

    /// Reads an input file and records its digest.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_input(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn output(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.outputs.push((path, bytes));
    }

    /// Writes all outputs atomically, then the manifest at `manifest_path`.
    pub fn finish(self, manifest_path: &Path) -> Result<RunManifest> {
        let mut outputs = Vec::new();
        for (path, bytes) in &self.outputs {
            write_atomic(path, bytes)?;
            outputs.push(FileDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = RunManifest {
            tool: "proplab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            argv: self.argv,
            config_hash: self.config_hash,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            created_unix: timestamp(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(manifest_path, &json)?;
        Ok(manifest)
    }
}
