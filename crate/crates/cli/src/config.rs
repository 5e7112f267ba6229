//! `key = value` config files merged under command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Parses `key = value` lines. Values are JSON; anything that does not parse
/// as JSON is taken as a bare string. `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Map<String, Value>, CliError> {
    let mut map = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_owned()));
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::usage(format!("config line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(map)
}

/// Overlays the flags in `cli` on top of the config file at `path`.
///
/// Unset flags (`None`, `false`) leave file values in place; keys the
/// command does not know are rejected.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, path: Option<&Path>) -> Result<T, CliError> {
    let Value::Object(flags) = serde_json::to_value(cli).map_err(|e| CliError::usage(e.to_string()))? else {
        unreachable!("command arguments serialize to a map");
    };
    let Some(path) = path else {
        return Ok(serde_json::from_value(Value::Object(flags)).map_err(|e| CliError::usage(e.to_string()))?);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut merged = parse_config(&text)?;
    for key in merged.keys() {
        if !flags.contains_key(key) || key == "config" {
            return Err(CliError::usage(format!("unknown config key {key:?}")));
        }
    }
    for (key, value) in flags {
        let unset = value.is_null() || value == Value::Bool(false);
        if !unset || !merged.contains_key(&key) {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("config: {e}")))
}
