use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliResult;

pub const MANIFEST_FORMAT: &str = "slidenet-manifest v1";

/// What a command reports about its run; `main` adds timing and writes it.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub arch: Option<String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub weights_checksum: Option<u64>,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    /// Takes every `key = value` line of a rendered training config.
    pub fn set_config_text(&mut self, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.set(k.trim(), v.trim());
            }
        }
    }
}

#[derive(Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub command: String,
    pub arch: Option<String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub weights_checksum: Option<String>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<String>,
    /// Exit status the command finished with.
    pub exit_code: u8,
}

impl RunManifest {
    pub fn new(command: &str, outcome: Outcome, threads: usize, seconds: f64, exit_code: u8) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT,
            command: command.to_string(),
            arch: outcome.arch,
            seed: outcome.seed,
            config: outcome.config,
            weights_checksum: outcome.weights_checksum.map(|c| format!("{c:#018x}")),
            threads,
            wall_clock_seconds: seconds,
            artifacts: outcome.artifacts.iter().map(|p| p.display().to_string()).collect(),
            exit_code,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| crate::error::CliError::Data(e.to_string()))?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
