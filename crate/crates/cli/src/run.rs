//! Run manifest written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vf_core::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStart {
    pub epoch: usize,
    pub step: u64,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Config as given on the command line.
    pub source_config: Option<PathBuf>,
    /// Copy of the config inside the output directory.
    pub config: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub stages: Vec<StageStart>,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, output: &Path, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            source_config: None,
            config: None,
            config_sha256: None,
            output: output.to_path_buf(),
            seed,
            started_unix: now_unix(),
            finished_unix: None,
            stages: Vec::new(),
        }
    }

    /// Copies the config text into `dir` and records its hash.
    pub fn attach_config(&mut self, source: &Path, text: &str, dir: &Path) -> Result<()> {
        let copy = dir.join("config.toml");
        fs::write(&copy, text).map_err(|e| CoreError::Io { path: copy.clone(), source: e })?;
        self.source_config = Some(source.to_path_buf());
        self.config = Some(copy);
        self.config_sha256 = Some(sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CoreError::Format(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })
    }
}
