use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One command invocation and everything needed to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Unix seconds.
    pub started: f64,
    pub finished: f64,
}

/// The single manifest file of an artifact directory. Each output path has
/// at most one run; rerunning a command replaces its record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub runs: Vec<RunManifest>,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, flags: &T, seeds: Vec<u64>, started: f64) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            flags: serde_json::to_value(flags)?,
            seeds,
            code_version: env!("CARGO_PKG_VERSION").into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started,
            finished: started,
        })
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    /// Stamps the end time and records the run in `dir/manifest.json`.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished = now();
        let path = dir.join(MANIFEST_FILE);
        let mut file = if path.exists() {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str::<ManifestFile>(&text).with_context(|| format!("malformed manifest {}", path.display()))?
        } else {
            ManifestFile::default()
        };
        file.runs.retain(|r| r.outputs != self.outputs);
        file.runs.push(self);
        fs::create_dir_all(dir)?;
        fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }
}

/// Directory a file output lives in.
pub fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
