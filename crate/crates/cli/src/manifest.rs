use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;
use crate::io::VERSION;

/// Record of one run: what was asked, with which settings, and what it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], threads: usize) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            config: serde_json::Value::Null,
            seed: None,
            threads,
            artifacts: Vec::new(),
            version: VERSION.to_string(),
        }
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).expect("configs serialize");
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
