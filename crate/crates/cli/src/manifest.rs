use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl DatasetRef {
    pub fn hash(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Record of one command invocation: its configuration, input dataset and
/// every file it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub dataset: Option<DatasetRef>,
    pub output_dir: PathBuf,
    pub artifacts: Vec<String>,
}

/// Writes files into one output directory and remembers their names.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        crate::ensure_dir(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Marks a file written by someone else (e.g. a library save function).
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.text(name, &text)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.record(name);
        Ok(())
    }

    pub fn finish(mut self, command: &str, config: serde_json::Value, dataset: Option<DatasetRef>) -> anyhow::Result<Vec<String>> {
        self.record("manifest.json");
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            dataset,
            output_dir: self.dir.clone(),
            artifacts: self.written.clone(),
        };
        let path = self.path("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.written)
    }
}
