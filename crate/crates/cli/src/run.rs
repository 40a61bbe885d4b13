//! Run-scoped output directories and their JSON manifests.

use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::OutArgs;

pub const RUN_MANIFEST: &str = "run.json";

/// Written before a command does any work and rewritten when it finishes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved settings of the command.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Hex SHA-256 of the resolved settings.
    pub config_hash: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub output_dir: PathBuf,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn content_hash(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

pub struct Run {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Creates the run directory and writes its manifest. `hash` defaults to
    /// the content hash of `config` and names the default directory.
    pub fn start(
        command: &str,
        out: &OutArgs,
        config: serde_json::Value,
        seed: Option<u64>,
        hash: Option<String>,
    ) -> Result<Self> {
        let config_hash = hash.unwrap_or_else(|| content_hash(&config));
        let dir = match &out.out {
            Some(d) => d.clone(),
            None => out.out_root.join(format!("{command}-{}", &config_hash[..12])),
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let run = Self {
            manifest: RunManifest {
                command: command.to_string(),
                config,
                seed,
                config_hash,
                started_at: now(),
                finished_at: None,
                output_dir: dir.clone(),
            },
            dir,
        };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_vec_pretty(&self.manifest)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finished_at = Some(now());
        self.write_manifest()?;
        Ok(self.dir)
    }
}
