//! Config files and argv merging.
//!
//! A config file holds one `key = value` per line with `#` comments; keys are
//! flag names with `-` or `_`. A previous run's output also works: a JSON
//! report contributes its `command` and `config` objects, a CSV its leading
//! `# key = value` preamble. File entries go in front of the command-line
//! flags so that the latter win.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

use crate::error::CliError;

pub const COMMANDS: [&str; 5] = ["bounds", "ci", "check-wald", "simulate", "replicate-tables"];

#[derive(Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub command: Option<String>,
    pub entries: Vec<(String, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

pub fn parse_key_values(text: &str) -> Result<ConfigFile, CliError> {
    let mut out = ConfigFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim())))?;
        let key = normalize(k);
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", i + 1)));
        }
        let value = v.trim().to_string();
        if key == "command" {
            out.command = Some(value);
        } else {
            out.entries.push((key, value));
        }
    }
    Ok(out)
}

fn json_scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(a) if a.is_empty() => None,
        Value::Array(a) => Some(a.iter().filter_map(json_scalar).collect::<Vec<_>>().join(",")),
        other => Some(other.to_string()),
    }
}

fn parse_report(text: &str) -> Result<ConfigFile, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config json: {e}")))?;
    let config = v
        .get("config")
        .and_then(Value::as_object)
        .ok_or_else(|| CliError::Config("json config has no `config` object".into()))?;
    Ok(ConfigFile {
        command: v.get("command").and_then(Value::as_str).map(String::from),
        entries: config
            .iter()
            .filter_map(|(k, v)| json_scalar(v).map(|s| (normalize(k), s)))
            .collect(),
    })
}

/// The `# key = value` lines at the top of a CSV output.
fn parse_preamble(text: &str) -> Result<ConfigFile, CliError> {
    let body: String = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim())
        .filter(|l| l.contains('='))
        .map(|l| format!("{l}\n"))
        .collect();
    parse_key_values(&body)
}

pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        parse_report(trimmed)
    } else if path.extension().is_some_and(|e| e == "csv") {
        parse_preamble(&text)
    } else {
        parse_key_values(&text)
    }
}

fn as_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => out.push(format!("--{k}={v}").into()),
        }
    }
    out
}

/// Value of `--config` in raw argv, if any.
pub fn config_path(args: &[OsString]) -> Option<std::path::PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(Into::into);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// argv with the config file's flags spliced in right after the subcommand.
/// When argv names no subcommand, the file's `command` is used.
pub fn merge(args: Vec<OsString>, file: &ConfigFile) -> Result<Vec<OsString>, CliError> {
    let flags = as_flags(&file.entries);
    let pos = args
        .iter()
        .position(|a| COMMANDS.contains(&a.to_string_lossy().as_ref()));
    let mut out = args;
    match pos {
        Some(p) => {
            out.splice(p + 1..p + 1, flags);
        }
        None => {
            let cmd = file
                .command
                .clone()
                .ok_or_else(|| CliError::Config("no subcommand on the command line or in the config".into()))?;
            let mut tail = out.split_off(1.min(out.len()));
            out.push(cmd.into());
            out.extend(flags);
            out.append(&mut tail);
        }
    }
    Ok(out)
}

/// Flat `key -> value` view of a resolved argument struct, in the same key
/// format the config files use.
pub fn resolved<T: serde::Serialize>(args: &T) -> serde_json::Map<String, Value> {
    match serde_json::to_value(args) {
        Ok(Value::Object(m)) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => serde_json::Map::new(),
    }
}

pub fn preamble(command: &str, config: &serde_json::Map<String, Value>) -> String {
    let mut s = format!("# late-bounds {command}\n# command = {command}\n");
    for (k, v) in config {
        if let Some(v) = json_scalar(v) {
            s.push_str(&format!("# {k} = {v}\n"));
        }
    }
    s
}
