//! Provenance header written as the first line of every output file.

use crate::config::Config;
use crate::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, cfg: &Config) -> Self {
        Self {
            tool: "l2i",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            config_hash: cfg.hash(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    /// `{"provenance": {...}}`
    pub fn json_line(&self) -> String {
        serde_json::json!({ "provenance": self }).to_string()
    }

    /// The JSON line behind a `# ` comment marker, for text and CSV outputs.
    pub fn comment_line(&self) -> String {
        format!("# {}", self.json_line())
    }
}

/// Creates parent directories and writes `contents` to `path`.
pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))
}
