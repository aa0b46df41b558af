use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Everything needed to rerun a result: `daml <command> --config manifest.json`
/// reads `config` back.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub manifest_schema_version: u32,
    pub command: &'a str,
    pub daml_version: &'a str,
    pub git_describe: &'a str,
    pub config: &'a C,
    pub seeds: Vec<u64>,
    pub resumed_from: Option<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, config: &'a C, seeds: Vec<u64>) -> Self {
        Manifest {
            manifest_schema_version: MANIFEST_SCHEMA_VERSION,
            command,
            daml_version: env!("CARGO_PKG_VERSION"),
            git_describe: env!("DAML_GIT_DESCRIBE"),
            config,
            seeds,
            resumed_from: None,
            outputs: Vec::new(),
            wall_ms: None,
        }
    }

    pub fn finish(mut self, started: Instant, timing: bool, path: &Path) -> CliResult<()> {
        if timing {
            self.wall_ms = Some(started.elapsed().as_millis() as u64);
        }
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::config(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
