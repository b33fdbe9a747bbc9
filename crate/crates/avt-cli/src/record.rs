//! Run records: config snapshot hash, per-stage metrics (JSON lines), and a
//! content-hashed artifact manifest with self-verification.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the record's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub status: String,
    pub artifacts: Vec<ArtifactEntry>,
    /// Wall-clock timings; excluded from determinism comparisons.
    pub timings: Vec<StageTiming>,
}

impl RunRecord {
    pub fn new(config: serde_json::Value) -> Self {
        let config_hash = sha256_hex(serde_json::to_string(&config).unwrap().as_bytes());
        RunRecord {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            config,
            status: "running".into(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn add_artifact(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.artifacts.push(ArtifactEntry {
            path: rel,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("record.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Recompute every artifact hash listed in a record and fail on mismatch.
pub fn verify_record(record_path: &Path) -> Result<RunRecord> {
    let record: RunRecord = serde_json::from_slice(
        &fs::read(record_path).with_context(|| format!("reading {}", record_path.display()))?,
    )?;
    let dir = record_path.parent().unwrap_or(Path::new("."));
    for a in &record.artifacts {
        let path = dir.join(&a.path);
        let actual = sha256_file(&path)?;
        if actual != a.sha256 {
            bail!(
                "hash mismatch for {}: recorded {} actual {}",
                a.path,
                a.sha256,
                actual
            );
        }
    }
    Ok(record)
}

/// Append-only JSON-lines metrics sink.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn create(path: PathBuf) -> Result<Self> {
        fs::write(&path, b"").with_context(|| format!("creating {}", path.display()))?;
        Ok(MetricsLog { path })
    }

    pub fn append(&self, value: &serde_json::Value) -> Result<()> {
        use std::io::Write;
        let mut f = fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(value)?)?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
