//! Per-run manifest: enough to reproduce the run bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = concat!("emoc ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: u64,
    pub train: u64,
    pub mapping: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub threads: usize,
    /// The effective configuration in canonical TOML.
    pub config: String,
    /// Files written by the run, relative to its output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, threads: usize, outputs: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            code_version: CODE_VERSION.to_string(),
            config_hash: cfg.hash(),
            seeds: Seeds {
                synth: cfg.synth.seed,
                train: cfg.train.seed,
                mapping: cfg.mapping.seed,
            },
            threads,
            config: cfg.to_toml(),
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
