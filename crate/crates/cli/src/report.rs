use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kgfuse::codec::write_atomic;
use kgfuse::seed::sha256_hex;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Machine-readable record of one command run.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: Value,
    pub counters: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Value>,
    pub wall_time_secs: f64,
    /// sha256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output file.
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunReport {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        Self {
            command: command.to_owned(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            counters: BTreeMap::new(),
            metrics: None,
            wall_time_secs: 0.0,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn count(&mut self, key: &str, value: impl Serialize) {
        self.counters
            .insert(key.to_owned(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Writes every staged output atomically, then the report itself.
    pub fn finish(mut self, outputs: Vec<(PathBuf, Vec<u8>)>, report_path: &Path) -> Result<(), CliError> {
        for (path, bytes) in &outputs {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            write_atomic(path, bytes)?;
            self.artifacts.insert(path.display().to_string(), sha256_hex(bytes));
        }
        self.wall_time_secs = self.started.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let json = serde_json::to_vec_pretty(&self).map_err(|e| CliError::data(e.to_string()))?;
        write_atomic(report_path, &json)?;
        Ok(())
    }
}

/// `<path>.report.json` next to the primary output.
pub fn default_report_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".report.json");
    primary.with_file_name(name)
}
