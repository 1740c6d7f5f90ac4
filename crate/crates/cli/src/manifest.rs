use std::fs;
use std::path::{Path, PathBuf};

use dfa_bisim::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

/// Provenance record written next to every output as
/// `<output>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    /// The run id hashes everything that determines the outputs, so reruns
    /// with the same inputs reproduce it.
    pub fn new(command: &str, seed: Option<u64>, config: Value, inputs: &[PathBuf]) -> Result<Self> {
        let inputs = inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
        let mut m = RunManifest {
            run_id: String::new(),
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs,
            outputs: Vec::new(),
        };
        let key = serde_json::to_vec(&m)?;
        m.run_id = hex::encode(Sha256::digest(&key))[..16].to_string();
        Ok(m)
    }

    /// Writes `contents` to `path` and records its digest.
    pub fn write_output(&mut self, path: &Path, contents: &str) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, contents)?;
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes the manifest beside the primary output.
    pub fn finish(&self, primary: &Path) -> Result<PathBuf> {
        let path = sidecar(primary, "manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

/// `<path>.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
