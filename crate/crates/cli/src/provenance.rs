//! Provenance records written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Completed,
}

/// Written once before work starts and rewritten on completion. There are no
/// timestamps, so reruns with the same flags produce the same bytes.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub status: Status,
    /// Output paths relative to the out directory, mapped to SHA-256 hex.
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip)]
    out: PathBuf,
}

impl Provenance {
    pub fn start(out: &Path, command: &str, seed: Option<u64>, config: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let p = Provenance {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            status: Status::Running,
            artifacts: BTreeMap::new(),
            out: out.to_path_buf(),
        };
        p.write()?;
        Ok(p)
    }

    pub fn path(&self) -> PathBuf {
        self.out.join(format!("provenance-{}.json", self.command))
    }

    fn write(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(self.path(), text).with_context(|| format!("writing {}", self.path().display()))
    }

    /// Hashes `files` (relative to the out directory) and marks the run done.
    pub fn complete<S: AsRef<str>>(mut self, files: &[S]) -> Result<()> {
        for f in files {
            let rel = f.as_ref();
            self.artifacts.insert(rel.to_string(), sha256_file(&self.out.join(rel))?);
        }
        self.status = Status::Completed;
        self.write()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
