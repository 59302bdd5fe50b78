//! Optional TOML config: the same keys as the command-line flags.
//!
//! Top-level keys apply to every subcommand; a table named after the
//! subcommand overrides them. Flags given on the command line win.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn load(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("bad config {}: {}", path.display(), e.message())))
}

fn settings(table: &toml::Table, command: &str) -> Result<Map<String, Value>, CliError> {
    let mut out = Map::new();
    for (k, v) in table {
        if !v.is_table() {
            out.insert(k.replace('_', "-"), to_json(v)?);
        }
    }
    if let Some(section) = table.get(command).and_then(|v| v.as_table()) {
        for (k, v) in section {
            out.insert(k.replace('_', "-"), to_json(v)?);
        }
    }
    Ok(out)
}

fn to_json(v: &toml::Value) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Usage(format!("config value: {e}")))
}

/// Fills every flag left unset (absent or `false`) from the config.
pub fn merge<T: Serialize + DeserializeOwned>(args: T, table: Option<&toml::Table>, command: &str) -> Result<T, CliError> {
    let Some(table) = table else { return Ok(args) };
    let Value::Object(mut flags) = serde_json::to_value(&args).expect("argument structs serialize") else {
        unreachable!("argument structs are objects")
    };
    for (k, v) in settings(table, command)? {
        if matches!(flags.get(&k), Some(Value::Null | Value::Bool(false))) {
            flags.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(flags)).map_err(|e| CliError::Usage(format!("config for `{command}`: {e}")))
}
