//! JSON config resolution: built-in defaults, then the config file, then
//! dotted `key=value` overrides, then `--seed`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// A subcommand's parameter block.
pub trait CommandConfig: Serialize + DeserializeOwned {
    /// Defaults merged under the config file. Required blocks are left out.
    fn defaults() -> Value;

    /// Dotted paths that `--seed` writes, given the merged config.
    fn seed_paths(merged: &Value) -> Vec<&'static str>;

    /// The seed recorded in the manifest.
    fn seed(&self) -> Option<u64>;

    fn validate(&self) -> Result<(), CliError> {
        Ok(())
    }
}

/// Tag keys of internally tagged enums. Objects whose tags differ are
/// replaced rather than merged.
const TAGS: [&str; 2] = ["kind", "source"];

/// Recursively overlays `over` onto `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retagged = TAGS.iter().any(|t| matches!((b.get(*t), o.get(*t)), (Some(x), Some(y)) if x != y));
            if retagged {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`. The value is read as JSON when possible and as a
/// bare string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override key `{key}` has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok((path, value))
}

/// Sets `path` inside `root`, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(CliError::Config(format!("`{}` is not an object", path[..i].join(".")))),
        };
        if i + 1 == path.len() {
            match obj.get_mut(seg) {
                Some(slot) => merge(slot, value),
                None => {
                    obj.insert(seg.clone(), value);
                }
            }
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Config(format!("{}: top level must be an object", path.display())));
    }
    Ok(v)
}

/// Resolves and validates a config. Returns it with its fully expanded
/// JSON form.
pub fn resolve<C: CommandConfig>(
    file: Option<Value>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<(C, Value), CliError> {
    let mut v = C::defaults();
    if let Some(f) = file {
        merge(&mut v, f);
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut v, &path, value)?;
    }
    if let Some(s) = seed {
        for p in C::seed_paths(&v) {
            let path: Vec<String> = p.split('.').map(str::to_owned).collect();
            set_path(&mut v, &path, Value::from(s))?;
        }
    }
    let cfg: C = serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    let resolved = serde_json::to_value(&cfg)?;
    Ok((cfg, resolved))
}
