//! `--set path=value` overrides for any serialisable config.

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, over: Value, path: &str) -> Result<(), Failure> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| Failure::config(format!("unknown field {here:?}")))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Deep-merges a TOML document onto `defaults`, so a file only needs the
/// fields it changes, including single fields of nested tables.
pub fn merge_toml<T: Serialize + DeserializeOwned>(defaults: T, text: &str) -> Result<T> {
    let over: Value = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
    let mut root = serde_json::to_value(&defaults)?;
    merge(&mut root, over, "")?;
    serde_json::from_value(root).map_err(|e| Failure::config(e.to_string()).into())
}

/// Sets each dotted `path=value` on the JSON form of `cfg` and converts
/// back. Values are parsed as JSON when possible and as strings otherwise.
/// Unknown paths are rejected.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(cfg: T, sets: &[String]) -> Result<T> {
    if sets.is_empty() {
        return Ok(cfg);
    }
    let mut root = serde_json::to_value(&cfg)?;
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set {s:?}: expected PATH=VALUE")))?;
        let mut node = &mut root;
        for key in path.split('.') {
            node = match node {
                Value::Object(map) if map.contains_key(key) => map.get_mut(key).expect("checked"),
                _ => return Err(Failure::config(format!("--set {s:?}: no field {key:?}")).into()),
            };
        }
        *node = parse_value(raw);
    }
    serde_json::from_value(root).map_err(|e| Failure::config(format!("--set: {e}")).into())
}
