//! Output directory handling and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Write `contents` to `path` through a temporary file and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// What ran, with which configuration, and where the results went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn start(command: &str, config_path: &Path, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            config_path: config_path.to_owned(),
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            threads: rayon::current_num_threads(),
            started: Utc::now(),
            finished: None,
            status: RunStatus::Running,
            error: None,
            outputs: Vec::new(),
        }
    }

    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join(Self::FILE)
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        write_json(&Self::path(out_dir), self)
    }

    pub fn finish(&mut self, result: &CliResult<Vec<PathBuf>>) {
        self.finished = Some(Utc::now());
        match result {
            Ok(outputs) => {
                self.status = RunStatus::Complete;
                self.outputs = outputs.clone();
            }
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(e.to_string());
            }
        }
    }
}
